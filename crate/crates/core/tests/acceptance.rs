//! Acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qgbc::assembly::{assemble, make_mesh, AssemblyOptions, Profile};
use qgbc::boundary::{partial_cayley, quasi_delta_cayley, quasi_delta_matrix, quasi_delta_unitary, QuasiDeltaParams};
use qgbc::control::*;
use qgbc::dynamics::*;
use qgbc::graph::{presets, EdgeDocument, Endpoint, GraphDocument, MetricGraph};
use qgbc::linalg::{c, max_abs, CVec};
use qgbc::quadrature::Poly;
use qgbc::scales::{scale_equivalence, HilbertScale};
use qgbc::stability::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> qgbc::Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn random_graph(rng: &mut ChaCha8Rng) -> MetricGraph {
    let hubs: usize = rng.gen_range(1..=3);
    let mut vertices: Vec<String> = (0..hubs).map(|j| format!("h{j}")).collect();
    let mut edges = Vec::new();
    let mut junctions: BTreeMap<String, Vec<(String, Endpoint)>> = BTreeMap::new();
    let mut exterior = Vec::new();
    for j in 0..hubs.saturating_sub(1) {
        let id = format!("c{j}");
        edges.push(EdgeDocument { id: id.clone(), from: format!("h{j}"), to: format!("h{}", j + 1), length: rng.gen_range(0.5..2.0), mesh: None });
        junctions.entry(format!("h{j}")).or_default().push((id.clone(), Endpoint::Tail));
        junctions.entry(format!("h{}", j + 1)).or_default().push((id, Endpoint::Head));
    }
    for j in 0..hubs {
        let used = junctions.get(&format!("h{j}")).map_or(0, |v| v.len());
        let min_extra = usize::from(used == 0);
        let extra = rng.gen_range(min_extra..=6 - used);
        for k in 0..extra {
            let (id, leaf) = (format!("l{j}_{k}"), format!("x{j}_{k}"));
            vertices.push(leaf.clone());
            edges.push(EdgeDocument { id: id.clone(), from: format!("h{j}"), to: leaf, length: rng.gen_range(0.5..2.0), mesh: None });
            junctions.entry(format!("h{j}")).or_default().push((id.clone(), Endpoint::Tail));
            exterior.push((id, Endpoint::Head));
        }
    }
    MetricGraph::build(&GraphDocument { vertices, edges, junctions, exterior }).expect("random graph is valid")
}

fn random_params(rng: &mut ChaCha8Rng, g: &MetricGraph, delta_max: f64) -> QuasiDeltaParams {
    let layout = g.boundary_index();
    let delta = (0..layout.blocks.len()).map(|_| rng.gen_range(-delta_max..=delta_max)).collect();
    let mut chi: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    for &p in &layout.exterior {
        chi[p] = 0.0;
    }
    QuasiDeltaParams::new(&layout, delta, chi).expect("parameters in range")
}

fn cayley_closed_form() -> qgbc::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let g = random_graph(&mut rng);
        let layout = g.boundary_index();
        let params = random_params(&mut rng, &g, PI - 1e-2);
        let generic = partial_cayley(&quasi_delta_matrix(&layout, &params))?;
        let closed = quasi_delta_cayley(&layout, &params);
        worst = worst.max(max_abs(&(&generic - &closed)));
    }
    outcome(worst <= 1e-12, format!("200 configs, max elementwise deviation {worst:.3e}"))
}

fn dirichlet_levels(g: &MetricGraph, h: f64, k: usize) -> qgbc::Result<Vec<f64>> {
    let layout = g.boundary_index();
    let params = QuasiDeltaParams::kirchhoff(&layout);
    let bc = quasi_delta_unitary(&layout, &params)?;
    let fm = assemble(g, &make_mesh(g, h), &bc, AssemblyOptions::default())?;
    Ok(fm.reduced().lowest(0.0, 0.0, k)?.0)
}

fn dirichlet_spectrum() -> qgbc::Result<Outcome> {
    let mut worst: f64 = 0.0;
    for (g, len) in [(presets::interval(1.0), 1.0), (presets::glued_pair(1.0, 1.0), 2.0)] {
        for (n, l) in dirichlet_levels(&g, 1e-3, 5)?.iter().enumerate() {
            let exact = ((n + 1) as f64 * PI / len).powi(2);
            worst = worst.max((l - exact).abs() / exact);
        }
    }
    outcome(worst < 1e-3, format!("max relative error {worst:.3e} over 2 × 5 levels"))
}

fn gauge_invariance() -> qgbc::Result<Outcome> {
    let g = presets::lasso();
    let layout = g.boundary_index();
    let mesh = make_mesh(&g, 1.0 / 200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let chi_bar: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = random_params(&mut rng, &g, 2.5);
        let (theta, a0) = theta_profile(&g, &layout, &chi_bar)?;
        let bc = quasi_delta_unitary(&layout, &params)?;
        let magnetic = assemble(&g, &mesh, &bc, AssemblyOptions { magnetic: Some(&a0), ..Default::default() })?;
        let tilde = bc.gauge_conjugate(&theta.traces(&mesh))?;
        let plain = assemble(&g, &mesh, &tilde, AssemblyOptions { frame: Some((&theta, 1.0)), ..Default::default() })?;
        let a = magnetic.reduced().operator(1.0, 0.0)?.spectrum(12).0;
        let b = plain.reduced().operator(0.0, 0.0)?.spectrum(12).0;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    outcome(worst <= 1e-8, format!("10 draws, 12 levels each, max relative deviation {worst:.3e}"))
}

fn interval_potential(h: f64) -> qgbc::Result<(FormLinearHamiltonian, CVec)> {
    let g = presets::interval(1.0);
    let layout = g.boundary_index();
    let bc = quasi_delta_unitary(&layout, &QuasiDeltaParams::kirchhoff(&layout))?;
    let x = Profile { edges: vec![Poly::linear(0.0, 1.0)] };
    let r = assemble(&g, &make_mesh(&g, h), &bc, AssemblyOptions { potential: Some(&x), ..Default::default() })?.reduced();
    let f = CoefficientSignal::cubic_hermite(vec![0.0, 0.5, 1.0], |t| 20.0 * (3.0 * t).sin(), |t| 60.0 * (3.0 * t).cos())?;
    let ham = FormLinearHamiltonian::new(&r.k + &r.b, vec![(r.v.clone(), f)], r.m.clone())?;
    let (_, vecs) = r.operator(0.0, 0.0)?.spectrum(2);
    Ok((ham, (&vecs.column(0) + &vecs.column(1)).to_owned()))
}

fn robin_pair(h: f64) -> qgbc::Result<(FormLinearHamiltonian, CVec)> {
    let g = presets::glued_pair(1.0, 0.7);
    let layout = g.boundary_index();
    let params = QuasiDeltaParams::new(&layout, vec![0.7], vec![0.0, 0.4, 1.3, 0.0])?;
    let bc = quasi_delta_unitary(&layout, &params)?;
    let bump = Profile { edges: vec![Poly(vec![0.0, 1.0, -1.0]), Poly::constant(0.5)] };
    let r = assemble(&g, &make_mesh(&g, h), &bc, AssemblyOptions { potential: Some(&bump), ..Default::default() })?.reduced();
    let f = CoefficientSignal::cubic_hermite(vec![0.0, 0.5, 1.0], |t| 10.0 * t * t - 4.0 * t, |t| 20.0 * t - 4.0)?;
    let ham = FormLinearHamiltonian::new(&r.k + &r.b, vec![(r.v.clone(), f)], r.m.clone())?;
    let (_, vecs) = r.operator(0.0, 0.0)?.spectrum(3);
    Ok((ham, (&vecs.column(0) - &vecs.column(2)).to_owned()))
}

fn lasso_induction(h: f64) -> qgbc::Result<(FormLinearHamiltonian, CVec)> {
    let sys = build_induction(&presets::lasso(), &[0.3, -0.4], &[0.0, 0.0, 0.0, 2.5], 2.0, h)?;
    let u = CoefficientSignal::linear_interpolant(vec![0.0, 0.5, 1.0], &[0.0, 0.4, -0.2])?;
    let (_, vecs) = sys.eigenstates(0.0, 2)?;
    Ok((sys.family(&u)?, (&vecs.column(0) + &vecs.column(1)).to_owned()))
}

fn propagator_contracts() -> qgbc::Result<Outcome> {
    let configs = [interval_potential(0.05)?, robin_pair(0.05)?, lasso_induction(0.05)?];
    let mut unit: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut ratios = Vec::new();
    for (ham, psi) in &configs {
        let full = propagate_smooth(ham, 0.0, 1.0, 0.01)?;
        unit = unit.max(full.unitarity_defect(&ham.mass));
        let split = propagate_smooth(ham, 0.0, 0.5, 0.01)?.then(&propagate_smooth(ham, 0.5, 1.0, 0.01)?)?;
        comp = comp.max(max_abs(&(&full.u - &split.u)));
        let h0 = ham.eval(0.0)?;
        let m = (-qgbc::linalg::generalized_eig(&h0, &ham.mass)?.values[0]).max(0.0);
        let scale = HilbertScale::new(&h0, &ham.mass, m)?;
        let e = qgbc::linalg::generalized_eig(&h0, &ham.mass)?;
        let probes: Vec<CVec> = (0..3).map(|k| e.vectors.column(k).to_owned()).collect();
        let psi = normalized(psi, &ham.mass);
        let res = |delta: f64| -> qgbc::Result<f64> {
            let count = (1.0 / delta).round() as usize;
            let traj = trajectory(ham, &psi, 0.0, delta, count)?;
            weak_residual(ham, &traj, 0.0, delta, &probes, &scale)
        };
        ratios.push(res(0.02)? / res(0.01)?);
    }
    let ok = unit < 1e-10 && comp < 1e-10 && ratios.iter().all(|r| (r - 4.0).abs() <= 0.5);
    outcome(ok, format!("unitarity {unit:.2e}, composition {comp:.2e}, residual ratios {ratios:.3?}"))
}

fn random_signal(rng: &mut ChaCha8Rng, amp: f64) -> qgbc::Result<CoefficientSignal> {
    let knots = rng.gen_range(2..=5);
    let times: Vec<f64> = (0..knots).map(|k| k as f64 / (knots - 1) as f64).collect();
    let values: Vec<f64> = times.iter().map(|_| rng.gen_range(-amp..amp)).collect();
    if rng.gen_bool(0.5) {
        CoefficientSignal::linear_interpolant(times, &values)
    } else {
        let (a, w) = (rng.gen_range(-amp..amp), rng.gen_range(0.5..4.0));
        CoefficientSignal::cubic_hermite(times, move |t| a * (w * t).sin(), move |t| a * w * (w * t).cos())
    }
}

fn growth_bounds_check() -> qgbc::Result<Outcome> {
    let g = presets::lasso();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let chi: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let delta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let sys = build_induction(&g, &delta, &chi, 10.0, 0.1)?;
        let r = &sys.reduced;
        let terms = vec![
            (r.s1.clone(), random_signal(&mut rng, 1.0)?),
            (r.s2.clone(), random_signal(&mut rng, 1.0)?),
            (r.v.clone(), random_signal(&mut rng, 3.0)?),
        ];
        let ham = FormLinearHamiltonian::new(&r.k + &r.b, terms, r.m.clone())?;
        let (lmin, _) = ham.sampled_lambda_min(0.0, 1.0, 64)?;
        let m = (-lmin).max(0.0) + 1.0;
        let (_, vecs) = sys.eigenstates(0.0, 4)?;
        let psi = normalized(&(0..4).fold(Array1::zeros(sys.dim()), |acc: CVec, k| acc + vecs.column(k).mapv(|z| z * c(rng.gen_range(-1.0..1.0)))), r_mass(&ham));
        let rep = growth_bounds(&ham, &psi, 0.0, 1.0, m, 0.005)?;
        worst = worst.min(rep.slack());
    }
    outcome(worst >= -1e-8, format!("50 runs, min slack {worst:.3e}"))
}

fn r_mass(ham: &FormLinearHamiltonian) -> &qgbc::linalg::CMat {
    &ham.mass
}

fn sawtooth_estimates() -> qgbc::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    let mut rows = 0;
    for _ in 0..20 {
        let (r, t, u0) = (rng.gen_range(0.1..3.0), rng.gen_range(0.5..4.0), rng.gen_range(-2.0..2.0));
        let pieces = rng.gen_range(1..=7);
        let mut breaks: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.0..t)).collect();
        breaks.push(0.0);
        breaks.push(t);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let values: Vec<f64> = (0..pieces).map(|_| rng.gen_range(-r..=r)).collect();
        let v = CoefficientSignal::piecewise_constant(breaks, &values)?;
        let flat = CoefficientSignal::constant(0.0, t, u0)?;
        for n in [1usize, 2, 4, 8, 16, 32] {
            let un = lift_to_induction(&v, u0, n)?;
            let (b1, b2) = sawtooth_bounds(u0, r, t, n);
            let d1 = un.l1_distance(&flat);
            let d2 = un.square()?.l1_distance(&flat.square()?);
            worst = worst.min((b1 - d1).min(b2 - d2));
            rows += 1;
        }
    }
    outcome(worst >= 0.0, format!("{rows} rows, min slack {worst:.3e}"))
}

fn convergence_system() -> qgbc::Result<(InductionSystem, CoefficientSignal, f64)> {
    let sys = build_induction(&presets::lasso(), &[0.3, -0.4], &[0.0, 0.0, 0.0, 2.5], 2.0, 1.0 / 50.0)?;
    let v = CoefficientSignal::piecewise_constant(vec![0.0, 0.5, 1.0], &[1.5, -2.0])?;
    Ok((sys, v, 0.3))
}

fn stability_convergence() -> qgbc::Result<Outcome> {
    let (sys, v, u0) = convergence_system()?;
    let limit = sys.aux_family(u0, &v)?;
    let scale = HilbertScale::new(&sys.static_hamiltonian(u0), sys.mass(), 1.0)?;
    let (_, vecs) = sys.eigenstates(u0, 3)?;
    let probes = vec![vecs.column(0).to_owned(), (&vecs.column(1) + &vecs.column(2)).to_owned()];
    let ns = [2usize, 4, 8, 16, 32, 64];
    let table = convergence_sweep(&limit, |n| sawtooth_member(&sys, &v, u0, n), &ns, 0.0, 1.0, 1.0 / 256.0, &scale, &probes)?;
    let slope = table.slope();
    let c_emp = 2.0 * table.empirical_constant(2);
    let bounded = table.rows.iter().all(|r| r.lhs <= c_emp * r.l1_u);
    let l1_ok = table.rows.iter().all(|r| r.bounds_hold());
    outcome(
        slope <= -0.9 && bounded && l1_ok,
        format!("slope {slope:.3}, C = {c_emp:.3} bounds every row: {bounded}, L1 estimates hold: {l1_ok}"),
    )
}

fn inverse_convergence_check() -> qgbc::Result<Outcome> {
    let sys = build_induction(&presets::lasso(), &[0.3, -0.4], &[0.0, 0.0, 0.0, 2.5], 2.0, 1.0 / 25.0)?;
    let v = CoefficientSignal::piecewise_constant(vec![0.0, 0.5, 1.0], &[1.5, -2.0])?;
    let mut family = vec![sys.aux_family(0.3, &v)?];
    for n in [2usize, 4, 8, 16] {
        family.push(sawtooth_member(&sys, &v, 0.3, n)?.ham);
    }
    let rep = check_assumptions(&family, &AssumptionOptions { anchor: 0.25, ..Default::default() })?;
    let reference = HilbertScale::new(&family[0].eval(0.25)?, &family[0].mass, rep.m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut samples = Vec::new();
    let mut c_all = rep.c;
    for _ in 0..100 {
        let j = rng.gen_range(0..family.len());
        let k = (j + rng.gen_range(1..family.len())) % family.len();
        let t = rng.gen_range(0.0..1.0);
        let (hj, hk) = (family[j].eval(t)?, family[k].eval(t)?);
        for h in [&hj, &hk] {
            c_all = c_all.max(scale_equivalence(&HilbertScale::new(h, &family[0].mass, rep.m)?, &reference)?);
        }
        samples.push((hj, hk));
    }
    let mut worst = f64::INFINITY;
    for (hj, hk) in &samples {
        let (lhs, rhs) = inverse_convergence(hj, hk, rep.m, c_all, &reference)?;
        worst = worst.min(rhs - lhs);
    }
    outcome(worst >= -1e-8, format!("100 samples, m = {:.3}, c = {c_all:.3}, min slack {worst:.3e}", rep.m))
}

fn two_level_control() -> qgbc::Result<Outcome> {
    let h0 = qgbc::scales::diag(&[0.0, 1.0]);
    let mut h1 = qgbc::scales::diag(&[0.0, 0.0]);
    h1[[0, 1]] = c(1.0);
    h1[[1, 0]] = c(1.0);
    let eye = qgbc::linalg::eye(2);
    let e0 = Array1::from(vec![c(1.0), c(0.0)]);
    let e1 = Array1::from(vec![c(0.0), c(1.0)]);
    // single constant pulse against the closed-form Rabi formula
    let (amp, t) = (0.4, 3.1);
    let u = step_operator(&(&h0 + &h1.mapv(|z| z * amp)), &eye, t)?;
    let w = (1.0 + 4.0 * amp * amp).sqrt();
    let rabi = 4.0 * amp * amp / (1.0 + 4.0 * amp * amp) * (w * t / 2.0).sin().powi(2);
    let oracle = (u.dot(&e0)[1].norm_sqr() - rabi).abs();
    let out = synthesize_piecewise_control(&h0, &h1, &eye, &e0, &e1, &SearchOptions::default())?;
    outcome(
        out.fidelity > 0.99 && oracle < 1e-12,
        format!("fidelity {:.6}, Rabi transition {rabi:.6} reproduced to {oracle:.1e}", out.fidelity),
    )
}

fn boundary_demo() -> qgbc::Result<Outcome> {
    let (u0, u1, r) = (0.0, 0.3, 2.0);
    let bcs = BoundaryControlSystem::new(&presets::lasso(), &[0.3, -0.4], &[0.0, 0.0, 0.0, 2.5], r, 1.0 / 200.0)?;
    let (_, start) = bcs.eigenstates(u0, 1)?;
    let (_, target) = bcs.eigenstates(u1, 2)?;
    let opts = RunOptions {
        u0,
        u1,
        lift: 800,
        dt: 0.05,
        search: SearchOptions { duration: 8.0, pieces: 40, r, restarts: 4, seed: 7, ..Default::default() },
        ..Default::default()
    };
    let res = boundary_control_run(&bcs, &start.column(0).to_owned(), &target.column(1).to_owned(), &opts)?;
    let s = &res.schedule;
    let endpoints = (s.eval(s.start())? - u0).abs() < 1e-12 && (s.eval_piece(s.pieces().len() - 1, s.end()) - u1).abs() < 1e-12;
    let slope = max_slope(s);
    let gauge = res.gauge_consistency.unwrap_or(f64::INFINITY);
    let ok = res.fidelity >= 0.90 && res.improvement() >= 5.0 && endpoints && slope <= r && gauge < 1e-8;
    outcome(
        ok,
        format!(
            "{} DOFs, fidelity {:.4}, weak distance {:.3e} vs free {:.3e} ({:.1}x), endpoints {endpoints}, max |u'| {slope:.3}, gauge {gauge:.2e}",
            bcs.induction.dim(),
            res.fidelity,
            res.weak_distance,
            res.free_weak_distance,
            res.improvement()
        ),
    )
}

fn main() {
    type Check = fn() -> qgbc::Result<Outcome>;
    let criteria: [(&str, Check, u64); 10] = [
        ("cayley closed form", cayley_closed_form, 5),
        ("dirichlet spectrum", dirichlet_spectrum, 30),
        ("gauge invariance", gauge_invariance, 60),
        ("propagator contracts", propagator_contracts, 60),
        ("growth bounds", growth_bounds_check, 120),
        ("sawtooth estimates", sawtooth_estimates, 5),
        ("stability convergence", stability_convergence, 600),
        ("inverse convergence", inverse_convergence_check, 60),
        ("two-level control", two_level_control, 10),
        ("boundary control demo", boundary_demo, 1200),
    ];
    let mut failed = 0;
    for (k, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {detail}; {:.1}s (limit {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
