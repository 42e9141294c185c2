//! Subcommand runners.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qgbc::assembly::{assemble, make_mesh, AssemblyOptions, Profile};
use qgbc::boundary::{partial_cayley, quasi_delta_cayley, quasi_delta_matrix, quasi_delta_unitary, QuasiDeltaParams};
use qgbc::control::{
    boundary_control_run, build_induction, max_slope, BoundaryControlSystem, InductionSystem, RunOptions, SearchOptions,
};
use qgbc::dynamics::{normalized, propagate_smooth, trajectory, weak_residual, FormLinearHamiltonian};
use qgbc::graph::{BoundaryLayout, MetricGraph};
use qgbc::linalg::{generalized_eig, inner, max_abs, CMat, CVec, C64};
use qgbc::quadrature::Poly;
use qgbc::scales::HilbertScale;
use qgbc::stability::{check_assumptions, convergence_sweep, AssumptionOptions};
use qgbc::Error;

use crate::config::{ControlSystemKind, ExactLadder, ExperimentConfig, TargetSpec};
use crate::exit::Failure;
use crate::output::{self, jnum, num, series, Output};

pub struct Context {
    pub config: ExperimentConfig,
    /// Directory that relative paths in the config refer to.
    pub base: PathBuf,
    pub out: Output,
    pub seed: u64,
}

impl Context {
    fn graph(&self) -> Result<(MetricGraph, BoundaryLayout), Failure> {
        let g = self.config.graph(&self.base)?;
        let layout = g.boundary_index();
        Ok((g, layout))
    }

    fn params(&self, g: &MetricGraph, layout: &BoundaryLayout) -> Result<QuasiDeltaParams, Failure> {
        let b = &self.config.boundary;
        Ok(QuasiDeltaParams::from_named(g, layout, &b.delta, &b.chi)?)
    }

    fn induction(&self, chi_bar: &BTreeMap<String, f64>, r: f64) -> Result<InductionSystem, Failure> {
        let (g, layout) = self.graph()?;
        let delta = self.params(&g, &layout)?.delta().to_vec();
        let chi = named_points(&g, &layout, chi_bar)?;
        Ok(build_induction(&g, &delta, &chi, r, self.config.mesh.h)?)
    }

    fn summary(&self, command: &str, mut body: Value) -> Result<(), Failure> {
        body["command"] = json!(command);
        body["seed"] = json!(self.seed);
        self.out.json("summary.json", &body)
    }
}

/// Vector over boundary points from a map keyed by `vertex/edge/endpoint`.
fn named_points(g: &MetricGraph, layout: &BoundaryLayout, values: &BTreeMap<String, f64>) -> Result<Vec<f64>, Failure> {
    let keys: Vec<String> = (0..layout.len()).map(|p| layout.point_key(g, p)).collect();
    let mut x = vec![0.0; layout.len()];
    for (name, value) in values {
        let p = keys
            .iter()
            .position(|k| k == name)
            .ok_or_else(|| Error::ParamMismatch(format!("unknown boundary point {name}")))?;
        x[p] = *value;
    }
    Ok(x)
}

fn m_shift(configured: Option<f64>, h: &CMat, mass: &CMat) -> Result<f64, Failure> {
    match configured {
        Some(m) => Ok(m),
        None => Ok((-generalized_eig(h, mass)?.values[0]).max(0.0) + 1.0),
    }
}

fn matrix_rows(a: &CMat) -> Vec<Vec<String>> {
    a.indexed_iter().map(|((i, j), z)| vec![i.to_string(), j.to_string(), num(z.re), num(z.im)]).collect()
}

pub fn spectrum(ctx: &Context) -> Result<(), Failure> {
    let block = ctx.config.block(&ctx.config.spectrum, "spectrum")?;
    let (g, layout) = ctx.graph()?;
    let bc = quasi_delta_unitary(&layout, &ctx.params(&g, &layout)?)?;
    let fm = assemble(&g, &make_mesh(&g, ctx.config.mesh.h), &bc, AssemblyOptions::default())?;
    let reduced = fm.reduced();
    let (values, _) = reduced.lowest(0.0, 0.0, block.count)?;
    let exact: Vec<Option<f64>> = (1..=values.len())
        .map(|n| block.exact.as_ref().map(|ExactLadder::Dirichlet { length }| (n as f64 * PI / length).powi(2)))
        .collect();
    let mut rows = Vec::new();
    let mut worst: Option<f64> = None;
    for (n, (l, e)) in values.iter().zip(&exact).enumerate() {
        let rel = e.map(|e| (l - e).abs() / e.abs());
        if let Some(r) = rel {
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
        rows.push(vec![(n + 1).to_string(), num(*l), e.map_or(String::new(), num), rel.map_or(String::new(), num)]);
    }
    ctx.out.csv("spectrum.csv", &["n", "lambda", "exact", "rel_error"], &rows)?;
    let mut plot = series("computed", values.iter().enumerate().map(|(n, l)| (n + 1, *l)));
    plot.extend(series("exact", exact.iter().enumerate().filter_map(|(n, e)| e.map(|e| (n + 1, e)))));
    ctx.out.csv(output::SPECTRUM_PLOT, &output::SPECTRUM_PLOT_HEADER, &plot)?;
    ctx.summary("spectrum", json!({ "dofs": reduced.dim(), "levels": values.len(), "max_rel_error": worst.map_or(Value::Null, jnum) }))
}

pub fn cayley(ctx: &Context) -> Result<(), Failure> {
    ctx.config.block(&ctx.config.cayley, "cayley")?;
    let (g, layout) = ctx.graph()?;
    let params = ctx.params(&g, &layout)?;
    let generic = partial_cayley(&quasi_delta_matrix(&layout, &params))?;
    let closed = quasi_delta_cayley(&layout, &params);
    let deviation = max_abs(&(&generic - &closed));
    let header = ["row", "col", "re", "im"];
    ctx.out.csv("cayley_generic.csv", &header, &matrix_rows(&generic))?;
    ctx.out.csv("cayley_closed.csv", &header, &matrix_rows(&closed))?;
    let points: Vec<String> = (0..layout.len()).map(|p| layout.point_key(&g, p)).collect();
    ctx.summary("cayley", json!({ "points": points, "max_deviation": jnum(deviation) }))
}

pub fn propagate(ctx: &Context) -> Result<(), Failure> {
    let block = ctx.config.block(&ctx.config.propagate, "propagate")?;
    let (g, layout) = ctx.graph()?;
    if block.potential.len() != g.edges().len() {
        return Err(Error::ParamMismatch(format!(
            "potential lists {} edge profiles, graph has {} edges",
            block.potential.len(),
            g.edges().len()
        ))
        .into());
    }
    let profile = Profile { edges: block.potential.iter().map(|c| Poly(c.clone())).collect() };
    let bc = quasi_delta_unitary(&layout, &ctx.params(&g, &layout)?)?;
    let opts = AssemblyOptions { potential: Some(&profile), ..Default::default() };
    let r = assemble(&g, &make_mesh(&g, ctx.config.mesh.h), &bc, opts)?.reduced();
    let signal = block.signal.build()?;
    let (s, t) = (signal.start(), signal.start() + block.duration);
    let ham = FormLinearHamiltonian::new(&r.k + &r.b, vec![(r.v.clone(), signal)], r.m.clone())?;

    let h0 = ham.eval(s)?;
    let e0 = generalized_eig(&h0, &ham.mass)?;
    let initial = if block.initial.is_empty() { vec![0] } else { block.initial.clone() };
    let mut psi: CVec = CVec::zeros(ham.dim());
    for &k in &initial {
        if k >= ham.dim() {
            return Err(Error::DimensionMismatch(format!("eigenstate {k} requested, dimension {}", ham.dim())).into());
        }
        psi = psi + e0.vectors.column(k);
    }
    let psi = normalized(&psi, &ham.mass);

    let full = propagate_smooth(&ham, s, t, block.dt)?;
    let mid = s + 0.5 * block.duration;
    let split = propagate_smooth(&ham, s, mid, block.dt)?.then(&propagate_smooth(&ham, mid, t, block.dt)?)?;
    let composition = max_abs(&(&full.u - &split.u));

    let m = m_shift(ctx.config.scale.m, &h0, &ham.mass)?;
    let scale = HilbertScale::new(&h0, &ham.mass, m)?;
    let probes: Vec<CVec> = (0..block.probes.min(ham.dim())).map(|k| e0.vectors.column(k).to_owned()).collect();
    let steps = (block.duration / block.dt).round() as usize;
    let traj = trajectory(&ham, &psi, s, block.dt, steps)?;
    let residual = weak_residual(&ham, &traj, s, block.dt, &probes, &scale)?;
    let fine = trajectory(&ham, &psi, s, 0.5 * block.dt, 2 * steps)?;
    let residual_half = weak_residual(&ham, &fine, s, 0.5 * block.dt, &probes, &scale)?;

    let mut rows = Vec::new();
    let mut survival = Vec::new();
    for (k, x) in traj.iter().enumerate() {
        let tk = s + k as f64 * block.dt;
        let mx = ham.mass.dot(x);
        let norm = inner(x.view(), mx.view()).re.max(0.0).sqrt();
        let energy = inner(x.view(), ham.eval(tk.min(t))?.dot(x).view()).re;
        let overlap = qgbc::dynamics::fidelity(&psi, x, &ham.mass);
        survival.push((tk, overlap));
        rows.push(vec![num(tk), num(norm), num(energy), num(overlap)]);
    }
    ctx.out.csv("trajectory.csv", &["t", "norm", "energy", "fidelity_initial"], &rows)?;
    let plot = series("survival", survival.iter().map(|(t, f)| (num(*t), *f)));
    ctx.out.csv(output::FIDELITY_PLOT, &output::FIDELITY_PLOT_HEADER, &plot)?;
    ctx.summary(
        "propagate",
        json!({
            "dofs": ham.dim(),
            "unitarity_defect": jnum(full.unitarity_defect(&ham.mass)),
            "composition_defect": jnum(composition),
            "weak_residual": jnum(residual),
            "weak_residual_half_step": jnum(residual_half),
            "residual_ratio": jnum(residual / residual_half),
        }),
    )
}

pub fn stability_sweep(ctx: &Context) -> Result<(), Failure> {
    let block = ctx.config.block(&ctx.config.stability_sweep, "stability-sweep")?;
    let sys = ctx.induction(&block.chi_bar, block.r)?;
    let v = block.v.build()?;
    let limit = sys.aux_family(block.u0, &v)?;
    let h_ref = sys.static_hamiltonian(block.u0);
    let scale = HilbertScale::new(&h_ref, sys.mass(), m_shift(ctx.config.scale.m, &h_ref, sys.mass())?)?;
    let (_, vecs) = sys.eigenstates(block.u0, block.probes)?;
    let probes: Vec<CVec> = vecs.columns().into_iter().map(|c| c.to_owned()).collect();
    let table = convergence_sweep(
        &limit,
        |n| qgbc::control::sawtooth_member(&sys, &v, block.u0, n),
        &block.n,
        v.start(),
        v.end(),
        block.dt,
        &scale,
        &probes,
    )?;
    ctx.out.text("sweep.csv", &table.csv())?;
    let mut plot = Vec::new();
    for (name, pick) in [
        ("lhs_plus_minus", (|r: &qgbc::stability::SweepRow| r.lhs) as fn(&qgbc::stability::SweepRow) -> f64),
        ("l1_u", |r| r.l1_u),
        ("bound_u", |r| r.bound_u),
        ("l1_u2", |r| r.l1_u2),
        ("bound_u2", |r| r.bound_u2),
    ] {
        plot.extend(series(name, table.rows.iter().map(|r| (r.n, pick(r)))));
    }
    ctx.out.csv(output::CONVERGENCE_PLOT, &output::CONVERGENCE_PLOT_HEADER, &plot)?;
    let bounds_hold = table.rows.iter().all(|r| r.bounds_hold());
    let constant = table.empirical_constant(table.rows.len());
    ctx.summary(
        "stability-sweep",
        json!({
            "dofs": sys.dim(),
            "slope": jnum(table.slope()),
            "empirical_constant": jnum(constant),
            "sawtooth_bounds_hold": bounds_hold,
        }),
    )?;
    if !bounds_hold {
        return Err(Failure::Assertion("a lifted schedule exceeds its L1 estimate".into()));
    }
    Ok(())
}

fn read_state(path: &Path, dim: usize) -> Result<CVec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let pairs: Vec<[f64; 2]> = serde_json::from_str(&text)
        .map_err(|e| Failure::ConfigInvalid { path: path.display().to_string(), message: e.to_string() })?;
    if pairs.len() != dim {
        return Err(Error::DimensionMismatch(format!("target has {} entries, system has {dim}", pairs.len())).into());
    }
    Ok(pairs.iter().map(|[re, im]| C64::new(*re, *im)).collect())
}

pub fn control_search(ctx: &Context) -> Result<(), Failure> {
    let block = ctx.config.block(&ctx.config.control_search, "control-search")?;
    let bcs = BoundaryControlSystem { induction: ctx.induction(&block.chi_bar, block.r)? };
    let (_, start) = bcs.eigenstates(block.u0, 1)?;
    let target = match &block.target {
        TargetSpec::Eigenstate { index } => bcs.eigenstates(block.u1, index + 1)?.1.column(*index).to_owned(),
        TargetSpec::Vector { file } => read_state(&ctx.base.join(file), bcs.induction.dim())?,
    };
    let opts = RunOptions {
        u0: block.u0,
        u1: block.u1,
        lift: block.lift,
        dt: block.dt,
        check_gauge: block.system == ControlSystemKind::Boundary,
        search: SearchOptions {
            duration: block.duration,
            pieces: block.pieces,
            r: block.r,
            positive_only: block.positive_only,
            restarts: block.restarts,
            seed: ctx.seed,
            target: 1.0 - block.epsilon,
            ..Default::default()
        },
        ..Default::default()
    };
    let res = boundary_control_run(&bcs, &start.column(0).to_owned(), &target, &opts)?;

    let u = &res.schedule;
    let last = u.pieces().len() - 1;
    let mut rows: Vec<Vec<String>> = u
        .breaks()
        .iter()
        .zip(0..=last)
        .map(|(&t, k)| vec![num(t), num(u.eval_piece(k, t)), num(u.derivative_piece(k, t))])
        .collect();
    rows.push(vec![num(u.end()), num(u.eval_piece(last, u.end())), num(u.derivative_piece(last, u.end()))]);
    ctx.out.csv("schedule.csv", &["t", "u", "du"], &rows)?;
    let plot = series("run", res.dumps.iter().map(|(t, f)| (num(*t), *f)));
    ctx.out.csv(output::FIDELITY_PLOT, &output::FIDELITY_PLOT_HEADER, &plot)?;

    let slope = max_slope(u);
    let result = json!({
        "dofs": bcs.induction.dim(),
        "system": if block.system == ControlSystemKind::Boundary { "boundary" } else { "induction" },
        "fidelity": jnum(res.fidelity),
        "weak_distance": jnum(res.weak_distance),
        "strong_distance": jnum(res.strong_distance),
        "free_weak_distance": jnum(res.free_weak_distance),
        "improvement": jnum(res.improvement()),
        "aux_fidelity": jnum(res.aux_fidelity),
        "search_fidelity": jnum(res.search.fidelity),
        "model_fidelity": jnum(res.search.model_fidelity),
        "search_trace": res.search.trace.iter().map(|&f| jnum(f)).collect::<Vec<_>>(),
        "winning_restart": res.search.restart,
        "evaluations": res.search.evaluations,
        "budget_exhausted": res.search.budget_exhausted,
        "pulse": res.search.v.breaks().iter().zip(0..).take(res.search.v.pieces().len())
            .map(|(&t, k)| json!([jnum(t), jnum(res.search.v.eval_piece(k, t))])).collect::<Vec<_>>(),
        "q": jnum(res.q),
        "p": jnum(res.p),
        "hold_penalty": jnum(res.hold_penalty),
        "gauge_consistency": res.gauge_consistency.map_or(Value::Null, jnum),
        "max_slope": jnum(slope),
        "duration": jnum(u.end() - u.start()),
    });
    ctx.out.json("result.json", &result)?;
    ctx.summary("control-search", json!({ "fidelity": jnum(res.fidelity), "improvement": jnum(res.improvement()) }))?;
    if res.fidelity < 1.0 - block.epsilon {
        return Err(Failure::Assertion(format!("fidelity {} below target {}", res.fidelity, 1.0 - block.epsilon)));
    }
    if res.gauge_consistency.is_some_and(|g| g > 1e-8) {
        return Err(Failure::Assertion("boundary and induction trajectories disagree".into()));
    }
    Ok(())
}

pub fn check(ctx: &Context) -> Result<(), Failure> {
    let block = ctx.config.block(&ctx.config.check_assumptions, "check-assumptions")?;
    let sys = ctx.induction(&block.chi_bar, block.r)?;
    let family = block
        .schedules
        .iter()
        .map(|spec| sys.family(&spec.build()?))
        .collect::<qgbc::Result<Vec<_>>>()?;
    let defaults = AssumptionOptions::default();
    let opts = AssumptionOptions {
        m_cap: block.m_cap.unwrap_or(defaults.m_cap),
        c_cap: block.c_cap.unwrap_or(defaults.c_cap),
        anchor: ctx.config.scale.anchor.unwrap_or(f64::NAN),
        ..defaults
    };
    let rep = check_assumptions(&family, &opts)?;
    let (lmin, member, at) = rep.lambda_min;
    ctx.out.json(
        "assumptions.json",
        &json!({
            "m": jnum(rep.m),
            "c": jnum(rep.c),
            "big_m": jnum(rep.big_m),
            "lambda_min": { "value": jnum(lmin), "member": member, "t": jnum(at) },
            "quadrature_flagged": rep.quadrature_flagged,
            "smoothness": rep.smoothness.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>(),
        }),
    )?;
    ctx.summary("check-assumptions", json!({ "members": family.len(), "m": jnum(rep.m), "c": jnum(rep.c) }))?;
    if rep.quadrature_flagged {
        log::warn!("derivative budget moved under panel refinement; M = {} is a quadrature estimate", rep.big_m);
    }
    Ok(())
}
