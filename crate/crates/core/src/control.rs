//! Boundary control by modulating the junction phases and its gauge-equivalent
//! induction system `H(t) = Δ_{u(t)A₀,Ũ} + u′(t)Θ₀`.

use std::f64::consts::PI;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{assemble, make_mesh, AssemblyOptions, FormMatrices, Profile, ReducedForms};
use crate::boundary::{quasi_delta_unitary, QuasiDeltaParams};
use crate::dynamics::{
    fidelity, mass_norm, plan_midpoint, plan_piecewise_constant, step_operator, CoefficientSignal, FormLinearHamiltonian,
    PlannedStep, StepCache, Stepper,
};
use crate::error::{Error, Result};
use crate::graph::{BoundaryLayout, MetricGraph, Owner};
use crate::linalg::{adjoint, generalized_eig, hermitian_eig, hermitize, inner, max_abs, CMat, CVec, C64, I};
use crate::quadrature::Poly;
use crate::scales::HilbertScale;
use crate::stability::SweepMember;

/// Agreement required between the frame projector and the fixed one.
pub const FRAME_PROJECTOR_TOL: f64 = 1e-9;
/// Cache budget for step operators of the end-to-end run.
pub const CACHE_BYTES: usize = 512 << 20;

/// Quintic smoothstep on `[0, ℓ]` from `a` to `b`, with vanishing first and
/// second derivatives at both ends.
pub fn smoothstep(a: f64, b: f64, length: f64) -> Poly {
    let d = b - a;
    Poly(vec![a, 0.0, 0.0, 10.0 * d / length.powi(3), -15.0 * d / length.powi(4), 6.0 * d / length.powi(5)])
}

/// Per-edge `Θ₀` interpolating `χ̄` at the junction endpoints and its
/// derivative `A₀ = Θ₀′`. Exterior endpoints are pinned to zero.
pub fn theta_profile(graph: &MetricGraph, layout: &BoundaryLayout, chi_bar: &[f64]) -> Result<(Profile, Profile)> {
    if chi_bar.len() != layout.len() {
        return Err(Error::ParamMismatch(format!("{} directions for {} boundary points", chi_bar.len(), layout.len())));
    }
    if chi_bar.iter().any(|x| !x.is_finite()) {
        return Err(Error::ParamMismatch("non-finite direction".into()));
    }
    let value = |p: usize| -> Result<f64> {
        match layout.points[p].owner {
            Owner::Exterior if chi_bar[p] != 0.0 => Err(Error::ParamMismatch(format!("exterior point {p} carries a direction"))),
            Owner::Exterior => Ok(0.0),
            Owner::Junction(_) => Ok(chi_bar[p]),
        }
    };
    let mut edges = Vec::with_capacity(graph.edges().len());
    for (e, edge) in graph.edges().iter().enumerate() {
        edges.push(smoothstep(value(2 * e)?, value(2 * e + 1)?, edge.length));
    }
    let theta = Profile { edges };
    let a0 = theta.derivative();
    Ok((theta, a0))
}

/// Largest `|f′|` over the domain of a signal.
pub fn max_slope(u: &CoefficientSignal) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, piece) in u.pieces().iter().enumerate() {
        let len = u.breaks()[k + 1] - u.breaks()[k];
        let d = piece.derivative();
        let mut points = vec![0.0, len];
        points.extend(d.derivative().roots_in(0.0, len));
        for s in points {
            worst = worst.max(d.eval(s).abs());
        }
    }
    worst
}

/// Quantum induction control system on reduced coordinates.
#[derive(Debug, Clone)]
pub struct InductionSystem {
    pub graph: MetricGraph,
    pub layout: BoundaryLayout,
    /// Strength per junction.
    pub delta: Vec<f64>,
    /// Direction per boundary point.
    pub chi_bar: Vec<f64>,
    pub r: f64,
    pub theta: Profile,
    pub a0: Profile,
    /// Blocks for the fixed condition `Ũ` (all phases zero).
    pub forms: FormMatrices,
    pub reduced: ReducedForms,
}

/// Assembles the induction system for strengths `delta`, direction
/// `chi_bar`, slope bound `r` and mesh size `h`.
pub fn build_induction(graph: &MetricGraph, delta: &[f64], chi_bar: &[f64], r: f64, h: f64) -> Result<InductionSystem> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidSchedule(format!("slope bound {r} must be finite and nonnegative")));
    }
    let layout = graph.boundary_index();
    let (theta, a0) = theta_profile(graph, &layout, chi_bar)?;
    let params = QuasiDeltaParams::new(&layout, delta.to_vec(), vec![0.0; layout.len()])?;
    let bc = quasi_delta_unitary(&layout, &params)?;
    let mesh = make_mesh(graph, h);
    let opts = AssemblyOptions { magnetic: Some(&a0), potential: Some(&theta), frame: None };
    let forms = assemble(graph, &mesh, &bc, opts)?;
    let reduced = forms.reduced();
    Ok(InductionSystem {
        graph: graph.clone(),
        layout,
        delta: delta.to_vec(),
        chi_bar: chi_bar.to_vec(),
        r,
        theta,
        a0,
        forms,
        reduced,
    })
}

impl InductionSystem {
    pub fn dim(&self) -> usize {
        self.reduced.dim()
    }

    pub fn mass(&self) -> &CMat {
        &self.reduced.m
    }

    /// `K + B + uS₁ + u²S₂`.
    pub fn static_hamiltonian(&self, u: f64) -> CMat {
        self.reduced.hamiltonian(u, 0.0)
    }

    /// `K + B + uS₁ + u²S₂ + bV` with `b = u′`.
    pub fn hamiltonian(&self, u: f64, du: f64) -> CMat {
        self.reduced.hamiltonian(u, du)
    }

    /// True when the control enters nowhere (`S₁ = S₂ = V = 0`).
    pub fn is_null(&self) -> bool {
        self.forms.s1.is_zero() && self.forms.s2.is_zero() && self.forms.v.is_zero()
    }

    /// Rejects schedules with `|u′| > r` somewhere.
    pub fn check_schedule(&self, u: &CoefficientSignal) -> Result<()> {
        let slope = max_slope(u);
        if slope > self.r * (1.0 + 1e-12) + 1e-14 {
            return Err(Error::InvalidSchedule(format!("|u′| reaches {slope}, bound is {}", self.r)));
        }
        Ok(())
    }

    /// Form-linear family with channels `u`, `u²`, `u′`.
    pub fn family(&self, u: &CoefficientSignal) -> Result<FormLinearHamiltonian> {
        self.check_schedule(u)?;
        let r = &self.reduced;
        FormLinearHamiltonian::new(
            &r.k + &r.b,
            vec![(r.s1.clone(), u.clone()), (r.s2.clone(), u.square()?), (r.v.clone(), u.derivative_signal())],
            r.m.clone(),
        )
    }

    /// Auxiliary system `Δ_{u₀A₀} + v(t)Θ₀` with constant form domain.
    pub fn aux_family(&self, u0: f64, v: &CoefficientSignal) -> Result<FormLinearHamiltonian> {
        FormLinearHamiltonian::new(self.static_hamiltonian(u0), vec![(self.reduced.v.clone(), v.clone())], self.reduced.m.clone())
    }

    /// Lowest `k` eigenpairs of the static Hamiltonian at `u`.
    pub fn eigenstates(&self, u: f64, k: usize) -> Result<(Vec<f64>, CMat)> {
        let op = self.reduced.operator(u, 0.0)?;
        Ok(op.spectrum(k))
    }
}

/// Nodal multiplier of `J(c)`: `e^{−icΘ₀(x)}` at every mesh node.
pub fn gauge_map(sys: &InductionSystem, c: f64) -> Vec<C64> {
    sys.theta.nodal(&sys.forms.mesh).iter().map(|&t| C64::from_polar(1.0, -c * t)).collect()
}

/// Quasi-δ boundary control system `χ_{v,e}(t) = c(t)χ̄_{v,e}`, discretized in
/// the moving frame `e^{ic(t)Θ₀}φ_i`.
#[derive(Debug, Clone)]
pub struct BoundaryControlSystem {
    pub induction: InductionSystem,
}

impl BoundaryControlSystem {
    pub fn new(graph: &MetricGraph, delta: &[f64], chi_bar: &[f64], r: f64, h: f64) -> Result<Self> {
        Ok(BoundaryControlSystem { induction: build_induction(graph, delta, chi_bar, r, h)? })
    }

    /// Boundary parameters at control value `c`.
    pub fn params(&self, c: f64) -> Result<QuasiDeltaParams> {
        let s = &self.induction;
        QuasiDeltaParams::new(&s.layout, s.delta.clone(), s.chi_bar.iter().map(|x| c * x).collect())
    }

    /// `(K + B, V)` of `Δ_{0,U(c)}` in frame coordinates, reduced with the
    /// fixed constraint basis after checking the frame projector matches it.
    pub fn frame_blocks(&self, c: f64) -> Result<(CMat, CMat)> {
        let s = &self.induction;
        let bc = quasi_delta_unitary(&s.layout, &self.params(c)?)?;
        let opts = AssemblyOptions { magnetic: None, potential: Some(&s.theta), frame: Some((&s.theta, c)) };
        let fm = assemble(&s.graph, &s.forms.mesh, &bc, opts)?;
        let drift = max_abs(&(&fm.p - &s.forms.p));
        if drift > FRAME_PROJECTOR_TOL {
            return Err(Error::MeshBcMismatch(format!("frame constraint space moved by {drift:e} at c = {c}")));
        }
        let r = &s.forms.reduction;
        let kb = hermitize(&(r.project(&fm.k) + r.project(&fm.b)));
        let v = hermitize(&r.project(&fm.v));
        Ok((kb, v))
    }

    /// Frame Hamiltonian `K_c + B_c + ċV` of the moving basis.
    pub fn hamiltonian(&self, c: f64, dc: f64) -> Result<CMat> {
        let (kb, v) = self.frame_blocks(c)?;
        Ok(kb + v.mapv(|z| z * dc))
    }

    /// Lowest `k` eigenpairs of `Δ_{0,U(c)}` in frame coordinates.
    pub fn eigenstates(&self, c: f64, k: usize) -> Result<(Vec<f64>, CMat)> {
        let (kb, _) = self.frame_blocks(c)?;
        let e = generalized_eig(&kb, self.induction.mass())?;
        let k = k.min(e.len());
        Ok((e.values.iter().take(k).copied().collect(), e.vectors.slice(ndarray::s![.., ..k]).to_owned()))
    }

    /// Nodal values of the boundary-system function with frame coordinates
    /// `x` at control value `c`.
    pub fn nodal(&self, c: f64, x: &CVec) -> CVec {
        let s = &self.induction;
        let full = s.forms.reduction.lift(x);
        let theta = s.theta.nodal(&s.forms.mesh);
        Array1::from_iter(full.iter().zip(&theta).map(|(z, t)| z * C64::from_polar(1.0, c * t)))
    }

    /// Nodal values of `J(c)† ψ` for an induction state with reduced
    /// coordinates `x`.
    pub fn pull_back(&self, c: f64, x: &CVec) -> CVec {
        let s = &self.induction;
        let full = s.forms.reduction.lift(x);
        let j = gauge_map(s, c);
        Array1::from_iter(full.iter().zip(&j).map(|(z, g)| z * g.conj()))
    }
}

/// Outcome of [`chambrion_report`]. Heuristic: it flags, never proves.
#[derive(Debug, Clone)]
pub struct ChambrionReport {
    pub eigenvalues: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `|⟨Φ_{n+1}, H₁Φ_n⟩|` for `n < k`.
    pub couplings: Vec<f64>,
    pub min_coupling: f64,
    /// Integer relation among the gaps with `|q_i| ≤ 20`, if one was found.
    pub relation: Option<Vec<i32>>,
    pub relation_residual: f64,
    pub couplings_nonzero: bool,
}

impl ChambrionReport {
    pub fn rationally_dependent(&self) -> bool {
        self.relation.is_some()
    }

    pub fn hypotheses_plausible(&self) -> bool {
        self.couplings_nonzero && self.relation.is_none()
    }
}

/// Largest coefficient of the integer-relation search.
pub const RELATION_BOUND: i32 = 20;

/// Gaps `λ_{n+1} − λ_n`, couplings and an integer-relation search for the
/// pencil `(h0, mass)` with control operator `h1`.
pub fn chambrion_report(h0: &CMat, h1: &CMat, mass: &CMat, k: usize, tol: f64) -> Result<ChambrionReport> {
    let e = generalized_eig(&hermitize(h0), mass)?;
    if e.len() < k + 1 {
        return Err(Error::DimensionMismatch(format!("{} eigenpairs for k = {k}", e.len())));
    }
    let eigenvalues: Vec<f64> = e.values.iter().take(k + 1).copied().collect();
    let gaps: Vec<f64> = eigenvalues.windows(2).map(|w| w[1] - w[0]).collect();
    let couplings: Vec<f64> = (0..k)
        .map(|n| {
            let a = e.vectors.column(n + 1);
            let b = h1.dot(&e.vectors.column(n));
            inner(a, b.view()).norm()
        })
        .collect();
    let scale = couplings.iter().copied().fold(0.0, f64::max).max(max_abs(h1));
    let min_coupling = couplings.iter().copied().fold(f64::INFINITY, f64::min);
    let couplings_nonzero = min_coupling > tol * scale.max(f64::MIN_POSITIVE);
    let (relation, relation_residual) = integer_relation(&gaps, RELATION_BOUND, tol);
    Ok(ChambrionReport { eigenvalues, gaps, couplings, min_coupling, relation, relation_residual, couplings_nonzero })
}

/// Searches `Σ q_i g_i ≈ 0` with `0 < max|q_i| ≤ bound`, relative to
/// `Σ|q_i||g_i|`. Exhaustive for up to four values, otherwise over supports of
/// at most three entries.
pub fn integer_relation(values: &[f64], bound: i32, tol: f64) -> (Option<Vec<i32>>, f64) {
    let n = values.len();
    let mut best: (Option<Vec<i32>>, f64) = (None, f64::INFINITY);
    let consider = |q: &[i32], best: &mut (Option<Vec<i32>>, f64)| {
        let mut sum = 0.0;
        let mut weight = 0.0;
        for (qi, g) in q.iter().zip(values) {
            sum += *qi as f64 * g;
            weight += (*qi as f64 * g).abs();
        }
        if weight == 0.0 {
            return;
        }
        let res = sum.abs() / weight;
        if res < best.1 {
            best.1 = res;
            if res < tol {
                best.0 = Some(q.to_vec());
            }
        }
    };
    if n <= 4 {
        let side = (2 * bound + 1) as usize;
        let total = side.pow(n as u32);
        let mut q = vec![0i32; n];
        for idx in 0..total {
            let mut r = idx;
            for qi in q.iter_mut() {
                *qi = (r % side) as i32 - bound;
                r /= side;
            }
            // canonical sign: first nonzero entry positive
            if q.iter().find(|&&x| x != 0).is_none_or(|&x| x < 0) {
                continue;
            }
            consider(&q, &mut best);
            if best.0.is_some() {
                break;
            }
        }
    } else {
        let mut q = vec![0i32; n];
        'pairs: for a in 0..n {
            for b in a + 1..n {
                for qa in 1..=bound {
                    for qb in (-bound..=bound).filter(|&x| x != 0) {
                        q[a] = qa;
                        q[b] = qb;
                        consider(&q, &mut best);
                        q[a] = 0;
                        q[b] = 0;
                        if best.0.is_some() {
                            break 'pairs;
                        }
                    }
                }
            }
        }
        if best.0.is_none() {
            'triples: for a in 0..n {
                for b in a + 1..n {
                    for cidx in b + 1..n {
                        for qa in 1..=bound {
                            for qb in (-bound..=bound).filter(|&x| x != 0) {
                                for qc in (-bound..=bound).filter(|&x| x != 0) {
                                    q[a] = qa;
                                    q[b] = qb;
                                    q[cidx] = qc;
                                    consider(&q, &mut best);
                                    q[a] = 0;
                                    q[b] = 0;
                                    q[cidx] = 0;
                                    if best.0.is_some() {
                                        break 'triples;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    best
}

/// Search configuration for [`synthesize_piecewise_control`].
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub duration: f64,
    pub pieces: usize,
    /// Amplitude bound: `v ∈ [−r, r]`, or `[0, r]` when `positive_only`.
    pub r: f64,
    pub positive_only: bool,
    pub restarts: usize,
    pub seed: u64,
    /// Number of eigenvectors of the drift spanning the search model.
    pub basis: usize,
    pub max_sweeps: usize,
    pub target: f64,
    /// Grid points of the per-piece line scan before refinement.
    pub scan_points: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            duration: 10.0,
            pieces: 40,
            r: 1.0,
            positive_only: false,
            restarts: 4,
            seed: 0,
            basis: 16,
            max_sweeps: 200,
            target: 0.999,
            scan_points: 9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Piecewise-constant control on `[0, duration]`.
    pub v: CoefficientSignal,
    /// Fidelity of the full system under `v`.
    pub fidelity: f64,
    /// Fidelity inside the search model.
    pub model_fidelity: f64,
    /// Best-so-far model fidelity after every sweep of the winning restart.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub evaluations: usize,
    /// The sweep budget ran out before the target was met.
    pub budget_exhausted: bool,
}

/// Drift eigenbasis model: `H = diag(λ) + v V` on `k` states.
struct Model {
    lambda: Vec<f64>,
    v: CMat,
    psi0: CVec,
    target: CVec,
    norm: f64,
    tau: f64,
}

impl Model {
    fn step(&self, amp: f64) -> Result<CMat> {
        let k = self.lambda.len();
        let mut h = self.v.mapv(|z| z * amp);
        for i in 0..k {
            h[[i, i]] += self.lambda[i];
        }
        let e = hermitian_eig(&hermitize(&h))?;
        let w = &e.vectors;
        let mut scaled = w.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            let s = (-I * (self.tau * e.values[j])).exp();
            col.mapv_inplace(|z| z * s);
        }
        Ok(scaled.dot(&adjoint(w)))
    }

    fn overlap(&self, back: &CVec, u: &CMat, fwd: &CVec) -> f64 {
        inner(back.view(), u.dot(fwd).view()).norm() / self.norm
    }
}

struct RestartResult {
    amps: Vec<f64>,
    fidelity: f64,
    trace: Vec<f64>,
    evaluations: usize,
    exhausted: bool,
}

fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> Result<(f64, f64, usize)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut evals = 2;
    for _ in 0..iters {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
        evals += 1;
    }
    Ok(if f1 >= f2 { (x1, f1, evals) } else { (x2, f2, evals) })
}

fn run_restart(model: &Model, mut amps: Vec<f64>, lo: f64, hi: f64, opts: &SearchOptions) -> Result<RestartResult> {
    let np = amps.len();
    let mut steps: Vec<CMat> = amps.iter().map(|&a| model.step(a)).collect::<Result<_>>()?;
    let mut evaluations = np;
    let total = |steps: &[CMat]| {
        let mut x = model.psi0.clone();
        for u in steps {
            x = u.dot(&x);
        }
        inner(model.target.view(), x.view()).norm() / model.norm
    };
    let mut best = total(&steps);
    let mut trace = vec![best];
    let mut exhausted = false;
    let mut sweeps = 0;
    while best < opts.target {
        if sweeps == opts.max_sweeps {
            exhausted = true;
            break;
        }
        sweeps += 1;
        // backward states b_{j} = U_{j}† … U_{N−1}† target
        let mut back = vec![model.target.clone(); np + 1];
        for j in (0..np).rev() {
            back[j] = adjoint(&steps[j]).dot(&back[j + 1]);
        }
        let mut fwd = model.psi0.clone();
        let start = best;
        for j in 0..np {
            let current = model.overlap(&back[j + 1], &steps[j], &fwd);
            let mut obj = |a: f64| -> Result<f64> { Ok(model.overlap(&back[j + 1], &model.step(a)?, &fwd)) };
            let m = opts.scan_points.max(3);
            let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
            let mut vals = Vec::with_capacity(m);
            for &a in &grid {
                vals.push(obj(a)?);
            }
            evaluations += m;
            let ib = (0..m).max_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
            let (a, b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(m - 1)]);
            let (x, fx, ev) = golden_max(&mut obj, a, b, 30)?;
            evaluations += ev;
            let (cand, fc) = if vals[ib] > fx { (grid[ib], vals[ib]) } else { (x, fx) };
            if fc > current {
                amps[j] = cand;
                steps[j] = model.step(cand)?;
                evaluations += 1;
            }
            fwd = steps[j].dot(&fwd);
        }
        best = best.max(total(&steps));
        trace.push(best);
        if best - start < 1e-10 {
            exhausted = best < opts.target;
            break;
        }
    }
    Ok(RestartResult { amps, fidelity: best, trace, evaluations, exhausted })
}

/// Piecewise-constant `v(t)` steering `psi0` toward `psi_t` under
/// `H(t) = h0 + v(t)h1` (see [`SearchOptions`]). Coordinate descent with line
/// scans per piece on a truncated drift eigenbasis; restarts run in parallel
/// and the best is verified on the full system.
pub fn synthesize_piecewise_control(
    h0: &CMat,
    h1: &CMat,
    mass: &CMat,
    psi0: &CVec,
    psi_t: &CVec,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    let (n0, nt) = (mass_norm(psi0, mass), mass_norm(psi_t, mass));
    if (n0 - nt).abs() > 1e-10 * n0.max(nt) || n0 == 0.0 {
        return Err(Error::NormMismatch(n0, nt));
    }
    if opts.pieces == 0 || !(opts.duration > 0.0) || !(opts.r >= 0.0) {
        return Err(Error::InvalidSchedule("search needs pieces ≥ 1, duration > 0 and r ≥ 0".into()));
    }
    let e = generalized_eig(&hermitize(h0), mass)?;
    let k = opts.basis.clamp(1, e.len());
    let w = e.vectors.slice(ndarray::s![.., ..k]).to_owned();
    let wt = adjoint(&w);
    let model = Model {
        lambda: e.values.iter().take(k).copied().collect(),
        v: hermitize(&wt.dot(h1).dot(&w)),
        psi0: wt.dot(&mass.dot(psi0)),
        target: wt.dot(&mass.dot(psi_t)),
        norm: n0 * nt,
        tau: opts.duration / opts.pieces as f64,
    };
    let (lo, hi) = if opts.positive_only { (0.0, opts.r) } else { (-opts.r, opts.r) };

    // seeds: zero, resonant bang-bang, then random
    let energy = |x: &CVec| inner(x.view(), h0.dot(x).view()).re / inner(x.view(), mass.dot(x).view()).re;
    let omega = (energy(psi_t) - energy(psi0)).abs();
    let mids: Vec<f64> = (0..opts.pieces).map(|j| (j as f64 + 0.5) * model.tau).collect();
    let mut seeds: Vec<Vec<f64>> = vec![vec![lo.max(0.0).min(hi); opts.pieces]];
    seeds.push(mids.iter().map(|t| if (omega * t).cos() >= 0.0 { hi } else { lo }).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while seeds.len() < opts.restarts.max(2) {
        seeds.push((0..opts.pieces).map(|_| rng.gen_range(lo..=hi)).collect());
    }
    let results: Vec<RestartResult> =
        seeds.into_par_iter().map(|s| run_restart(&model, s, lo, hi, opts)).collect::<Result<_>>()?;
    let mut winner = 0;
    for (i, r) in results.iter().enumerate() {
        if r.fidelity > results[winner].fidelity + 1e-12 {
            winner = i;
        }
    }
    let evaluations = results.iter().map(|r| r.evaluations).sum();
    let best = &results[winner];
    let breaks: Vec<f64> = (0..=opts.pieces).map(|j| j as f64 * model.tau).collect();
    let v = CoefficientSignal::piecewise_constant(breaks, &best.amps)?;

    let aux = FormLinearHamiltonian::new(h0.clone(), vec![(h1.clone(), v.clone())], mass.clone())?;
    let steps = plan_piecewise_constant(&aux, 0.0, opts.duration)?;
    let (fin, _) = Stepper::new(&aux).state(&steps, psi0, &[])?;
    let fid = fidelity(psi_t, &fin, mass);
    Ok(SearchOutcome {
        v,
        fidelity: fid,
        model_fidelity: best.fidelity,
        trace: best.trace.clone(),
        restart: winner,
        evaluations,
        budget_exhausted: best.exhausted && best.fidelity < opts.target,
    })
}

/// Resetting sawtooth: on every interval of the coarsest common refinement of
/// the `n`-grid and the breakpoints of `v`, `u` ramps from `u₀` with slope `v`.
pub fn lift_to_induction(v: &CoefficientSignal, u0: f64, n: usize) -> Result<CoefficientSignal> {
    if n == 0 {
        return Err(Error::InvalidSchedule("lift needs n ≥ 1".into()));
    }
    let (s, t) = (v.start(), v.end());
    if !v.is_constant_on_pieces(s, t) {
        return Err(Error::NotPiecewiseConstant { start: s, end: t });
    }
    let tau = (t - s) / n as f64;
    let grid: Vec<f64> = (0..=n).map(|j| if j == n { t } else { s + j as f64 * tau }).collect();
    let breaks = crate::dynamics::merge_breaks([grid.as_slice(), v.breaks()]);
    let pieces = breaks
        .windows(2)
        .map(|w| Poly::linear(u0, v.eval_piece(v.piece_index(0.5 * (w[0] + w[1])), 0.5 * (w[0] + w[1]))))
        .collect();
    CoefficientSignal::new(breaks, pieces)
}

/// Right-hand sides `rT²/n` and `|u₀|rT²/n + r²T³/n²` of the sawtooth
/// estimates.
pub fn sawtooth_bounds(u0: f64, r: f64, duration: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let t2 = duration * duration;
    (r * t2 / n, u0.abs() * r * t2 / n + r * r * t2 * duration / (n * n))
}

/// Induction family driven by the sawtooth lift of `v` with its distances
/// to the constant `u₀` and the matching analytic bounds.
pub fn sawtooth_member(sys: &InductionSystem, v: &CoefficientSignal, u0: f64, n: usize) -> Result<SweepMember> {
    let un = lift_to_induction(v, u0, n)?;
    let flat = CoefficientSignal::constant(v.start(), v.end(), u0)?;
    let l1_u = un.l1_distance(&flat);
    let l1_u2 = un.square()?.l1_distance(&flat.square()?);
    let r = max_slope(&un).max(sys.r);
    let (bound_u, bound_u2) = sawtooth_bounds(u0, r, v.end() - v.start(), n);
    Ok(SweepMember { ham: sys.family(&un)?, l1_u, l1_u2, bound_u, bound_u2 })
}

/// Prepends a hold at `u₀` of length `q` and appends a hold at `u₁` of length
/// `p`; the result starts at time 0. A zero-length hold requires the
/// schedule to already match that endpoint.
pub fn endpoint_match(u: &CoefficientSignal, u0: f64, u1: f64, q: f64, p: f64) -> Result<CoefficientSignal> {
    if !(q >= 0.0 && p >= 0.0) {
        return Err(Error::InvalidSchedule(format!("hold lengths {q}, {p} must be nonnegative")));
    }
    let last = u.pieces().len() - 1;
    let (first, end) = (u.eval_piece(0, u.start()), u.eval_piece(last, u.end()));
    if q == 0.0 && (first - u0).abs() > 1e-12 {
        return Err(Error::InvalidSchedule(format!("schedule starts at {first}, expected {u0}")));
    }
    if p == 0.0 && (end - u1).abs() > 1e-12 {
        return Err(Error::InvalidSchedule(format!("schedule ends at {end}, expected {u1}")));
    }
    let shifted = u.shifted(q - u.start());
    let mut breaks = Vec::new();
    let mut pieces = Vec::new();
    if q > 0.0 {
        breaks.push(0.0);
        pieces.push(Poly::constant(u0));
    }
    breaks.extend_from_slice(shifted.breaks());
    pieces.extend(shifted.pieces().iter().cloned());
    if p > 0.0 {
        breaks.push(shifted.end() + p);
        pieces.push(Poly::constant(u1));
    }
    CoefficientSignal::new(breaks, pieces)
}

/// Weak-distance cost `‖(e^{−iHp} − I)ψ‖₋` of holding for time `p`.
pub fn hold_penalty(h: &CMat, mass: &CMat, scale: &HilbertScale, psi: &CVec, p: f64) -> Result<f64> {
    let u = step_operator(h, mass, p)?;
    Ok(scale.norm_minus(&(u.dot(psi) - psi)))
}

/// Settings of [`boundary_control_run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub u0: f64,
    pub u1: f64,
    pub search: SearchOptions,
    /// Number of sawtooth intervals of the lift.
    pub lift: usize,
    /// Largest exponential-midpoint step.
    pub dt: f64,
    /// Initial hold at `u₀`.
    pub q: f64,
    /// Grid points of the final-hold phase scan.
    pub phase_scan: usize,
    /// Also propagate the boundary system and compare trajectories.
    pub check_gauge: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { u0: 0.0, u1: 0.0, search: SearchOptions::default(), lift: 400, dt: 0.05, q: 0.0, phase_scan: 64, check_gauge: true }
    }
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    /// Full schedule `u(t)` on `[0, q + T + p]`.
    pub schedule: CoefficientSignal,
    pub final_state: CVec,
    pub fidelity: f64,
    pub weak_distance: f64,
    pub strong_distance: f64,
    /// Weak distance after free evolution (`u ≡ u₀`) of the same duration.
    pub free_weak_distance: f64,
    pub search: SearchOutcome,
    /// Full-system fidelity of the auxiliary system under `v`.
    pub aux_fidelity: f64,
    pub q: f64,
    pub p: f64,
    pub hold_penalty: f64,
    /// `max_t ‖ψ_boundary(t) − J(t)†ψ_induction(t)‖ / ‖ψ‖` over dump times.
    pub gauge_consistency: Option<f64>,
    pub dumps: Vec<(f64, f64)>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl ControlResult {
    pub fn improvement(&self) -> f64 {
        self.free_weak_distance / self.weak_distance
    }
}

/// Propagates `psi` through the boundary system in frame coordinates using
/// the steps planned for the induction family (`coeffs = [u, u², u′]`).
pub fn propagate_boundary(
    bcs: &BoundaryControlSystem,
    steps: &[PlannedStep],
    psi: &CVec,
    dumps: &[f64],
    cache: &mut StepCache,
) -> Result<(CVec, Vec<(f64, CVec)>)> {
    let mass = bcs.induction.mass().clone();
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
    let mut x = psi.clone();
    let mut out = Vec::new();
    let mut next = 0;
    if let Some(first) = steps.first() {
        while next < dumps.len() && near(dumps[next], first.start) {
            out.push((dumps[next], x.clone()));
            next += 1;
        }
    }
    for st in steps {
        let (c, dc) = (st.coeffs[0], st.coeffs[2]);
        let op = cache.get_or_insert(st.dt, &st.coeffs, || step_operator(&bcs.hamiltonian(c, dc)?, &mass, st.dt))?;
        x = op.dot(&x);
        let end = st.start + st.dt;
        while next < dumps.len() && near(dumps[next], end) {
            out.push((dumps[next], x.clone()));
            next += 1;
        }
    }
    Ok((x, out))
}

/// Runs synthesize → lift → endpoint match → propagate for boundary states
/// given in frame coordinates (`psi0` at `c = u₀`, `psi_t` at `c = u₁`).
pub fn boundary_control_run(bcs: &BoundaryControlSystem, psi0: &CVec, psi_t: &CVec, opts: &RunOptions) -> Result<ControlResult> {
    let sys = &bcs.induction;
    let mass = sys.mass().clone();
    let (n0, nt) = (mass_norm(psi0, &mass), mass_norm(psi_t, &mass));
    if (n0 - nt).abs() > 1e-10 * n0.max(nt) {
        return Err(Error::NormMismatch(n0, nt));
    }
    // frame coordinates at c are the induction coordinates of J(c)ψ
    let (phi0, phi_t) = (psi0.clone(), psi_t.clone());
    let mut search_opts = opts.search.clone();
    search_opts.r = search_opts.r.min(sys.r);
    let h_aux = sys.static_hamiltonian(opts.u0);
    let search = synthesize_piecewise_control(&h_aux, &sys.reduced.v, &mass, &phi0, &phi_t, &search_opts)?;
    let aux_fidelity = search.fidelity;
    log::info!(
        "search: restart {} model fidelity {:.6}, full fidelity {:.6}, {} evaluations",
        search.restart,
        search.model_fidelity,
        search.fidelity,
        search.evaluations
    );

    let lifted = lift_to_induction(&search.v, opts.u0, opts.lift)?;
    let pre = endpoint_match(&lifted, opts.u0, lifted.eval_piece(lifted.pieces().len() - 1, lifted.end()), opts.q, 0.0)?;
    let fam_pre = sys.family(&pre)?;
    let n = sys.dim();
    let mut cache = StepCache::with_budget(n, CACHE_BYTES);
    let (t_pre0, t_pre1) = fam_pre.domain();
    let steps_pre = plan_midpoint(&fam_pre, t_pre0, t_pre1, opts.dt)?;
    let (psi_pre, _) = Stepper::with_cache(&fam_pre, &mut cache).state(&steps_pre, &phi0, &[])?;

    // final hold at u₁: pick p so the target's phase lines up
    let h1 = sys.static_hamiltonian(opts.u1);
    let e1 = generalized_eig(&h1, &mass)?;
    let anchor_h = fam_pre.eval(t_pre0)?;
    let m_shift = (-generalized_eig(&hermitize(&anchor_h), &mass)?.values[0]).max(0.0);
    let scale = HilbertScale::new(&hermitize(&anchor_h), &mass, m_shift)?;
    let coords = adjoint(&e1.vectors).dot(&mass.dot(&psi_pre));
    let held = |p: f64| -> CVec {
        let phased = Array1::from_iter(coords.iter().zip(e1.values.iter()).map(|(z, l)| z * (-I * (l * p)).exp()));
        e1.vectors.dot(&phased)
    };
    let lam_t = inner(phi_t.view(), h1.dot(&phi_t).view()).re / (nt * nt);
    let period = 2.0 * PI / lam_t.abs().max(2.0 * PI / search_opts.duration.max(1e-9));
    let dist = |p: f64| scale.norm_minus(&(&phi_t - &held(p)));
    let m = opts.phase_scan.max(4);
    let mut best_p = period / m as f64;
    let mut best_d = f64::INFINITY;
    for i in 1..=m {
        let p = period * i as f64 / m as f64;
        let d = dist(p);
        if d < best_d {
            best_d = d;
            best_p = p;
        }
    }
    let (p, _, _) = golden_max(|p| Ok(-dist(p)), (best_p - period / m as f64).max(1e-12), best_p + period / m as f64, 40)?;
    log::debug!("final hold p = {p:.6} over period {period:.6}");

    let schedule = endpoint_match(&lifted, opts.u0, opts.u1, opts.q, p)?;
    let family = sys.family(&schedule)?;
    let (s, t) = family.domain();
    let steps = plan_midpoint(&family, s, t, opts.dt)?;
    let dumps: Vec<f64> = {
        let mut d: Vec<f64> = search.v.breaks().iter().map(|b| b + opts.q).collect();
        d.push(t);
        if opts.q > 0.0 {
            d.insert(0, 0.0);
        }
        d
    };
    let (fin, traj) = Stepper::with_cache(&family, &mut cache).state(&steps, &phi0, &dumps)?;
    let (cache_hits, cache_misses) = (cache.hits, cache.misses);
    log::debug!("induction run: {} steps, cache {cache_hits} hits / {cache_misses} misses", steps.len());

    let gauge_consistency = if opts.check_gauge {
        let mut bcache = StepCache::with_budget(n, CACHE_BYTES);
        let (_, btraj) = propagate_boundary(bcs, &steps, &phi0, &dumps, &mut bcache)?;
        let mut worst: f64 = 0.0;
        for ((tb, xb), (_, xi)) in btraj.iter().zip(&traj) {
            let c = schedule.eval(*tb).unwrap_or_else(|_| schedule.eval_piece(schedule.piece_index(*tb), *tb));
            let a = bcs.nodal(c, xb);
            let b = bcs.pull_back(c, xi);
            let diff = &a - &b;
            let full_mass = sys.forms.m.to_dense();
            let num = inner(diff.view(), full_mass.dot(&diff).view()).re.max(0.0).sqrt();
            let den = inner(b.view(), full_mass.dot(&b).view()).re.max(0.0).sqrt();
            worst = worst.max(num / den);
        }
        Some(worst)
    } else {
        None
    };

    let free = step_operator(&sys.static_hamiltonian(opts.u0), &mass, t - s)?.dot(&phi0);
    let hold = hold_penalty(&h1, &mass, &scale, &psi_pre, p)?;
    let dump_fid = traj.iter().map(|(tk, x)| (*tk, fidelity(&phi_t, x, &mass))).collect();
    Ok(ControlResult {
        schedule,
        fidelity: fidelity(&phi_t, &fin, &mass),
        weak_distance: scale.norm_minus(&(&phi_t - &fin)),
        strong_distance: mass_norm(&(&phi_t - &fin), &mass),
        free_weak_distance: scale.norm_minus(&(&phi_t - &free)),
        final_state: fin,
        search,
        aux_fidelity,
        q: opts.q,
        p,
        hold_penalty: hold,
        gauge_consistency,
        dumps: dump_fid,
        cache_hits,
        cache_misses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::presets;
    use crate::linalg::{c, eye};
    use ndarray::{array, Array2};

    #[test]
    fn smoothstep_oracle() {
        let p = smoothstep(0.0, PI, 1.0);
        for x in [0.0f64, 0.2, 0.5, 0.9, 1.0] {
            let exact = PI * (10.0 * x.powi(3) - 15.0 * x.powi(4) + 6.0 * x.powi(5));
            assert!((p.eval(x) - exact).abs() < 1e-14);
        }
        assert!((p.derivative().eval(0.5) - PI * 15.0 / 8.0).abs() < 1e-13);
        for x in [0.0, 1.0] {
            assert!(p.derivative().eval(x).abs() < 1e-13 && p.derivative().derivative().eval(x).abs() < 1e-12);
        }
        let flat = smoothstep(0.7, 0.7, 2.0);
        assert!(flat.derivative().0.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn exterior_direction_rejected() {
        let g = presets::interval(1.0);
        let layout = g.boundary_index();
        assert!(theta_profile(&g, &layout, &[0.0, 0.0]).is_ok());
        assert!(matches!(theta_profile(&g, &layout, &[0.3, 0.0]), Err(Error::ParamMismatch(_))));
    }

    fn lasso_system(h: f64) -> BoundaryControlSystem {
        BoundaryControlSystem::new(&presets::lasso(), &[0.3, -0.4], &[1.0, 0.0, 0.0, 1.5], 2.0, h).unwrap()
    }

    #[test]
    fn null_and_loop_systems() {
        let g = presets::lasso();
        let null = build_induction(&g, &[0.3, -0.4], &[0.0; 4], 1.0, 0.1).unwrap();
        assert!(null.is_null());
        let sys = lasso_system(0.1).induction;
        assert!(!sys.is_null());
        assert!(max_abs(&sys.reduced.s1) > 1e-3);
    }

    #[test]
    fn zero_slope_bound_admits_only_constants() {
        let g = presets::lasso();
        let sys = build_induction(&g, &[0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], 0.0, 0.2).unwrap();
        assert!(sys.family(&CoefficientSignal::constant(0.0, 1.0, 0.4).unwrap()).is_ok());
        let ramp = CoefficientSignal::linear_interpolant(vec![0.0, 1.0], &[0.0, 1e-3]).unwrap();
        assert!(matches!(sys.family(&ramp), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn gauge_map_composes() {
        let sys = lasso_system(0.1).induction;
        assert!(gauge_map(&sys, 0.0).iter().all(|z| (*z - c(1.0)).norm() == 0.0));
        let (a, b, ab) = (gauge_map(&sys, 0.4), gauge_map(&sys, -1.1), gauge_map(&sys, 0.4 - 1.1));
        for ((x, y), z) in a.iter().zip(&b).zip(&ab) {
            assert!((x * y - z).norm() < 1e-14 && (x.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_and_induction_spectra_agree() {
        let bcs = lasso_system(0.05);
        for cval in [0.0, 0.37, -0.8] {
            let (lb, _) = bcs.eigenstates(cval, 6).unwrap();
            let (li, _) = bcs.induction.eigenstates(cval, 6).unwrap();
            for (a, b) in lb.iter().zip(&li) {
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn chambrion_dirichlet_couplings() {
        let g = presets::interval(1.0);
        let layout = g.boundary_index();
        let x = Profile { edges: vec![Poly::linear(0.0, 1.0)] };
        let bc = quasi_delta_unitary(&layout, &QuasiDeltaParams::new(&layout, vec![], vec![0.0, 0.0]).unwrap()).unwrap();
        let fm = assemble(&g, &make_mesh(&g, 2e-3), &bc, AssemblyOptions { potential: Some(&x), ..Default::default() }).unwrap();
        let r = fm.reduced();
        let rep = chambrion_report(&(&r.k + &r.b), &r.v, &r.m, 4, 1e-9).unwrap();
        for (n, got) in rep.couplings.iter().enumerate() {
            let n = (n + 1) as f64;
            let exact = 2.0 * n * (n + 1.0) / (PI * PI * (n + 0.5).powi(2));
            assert!((got - exact).abs() < 1e-4 * exact, "{got} vs {exact}");
        }
        assert!(rep.couplings_nonzero);
        let none = chambrion_report(&(&r.k + &r.b), &r.m, &r.m, 4, 1e-9).unwrap();
        assert!(!none.couplings_nonzero && !none.hypotheses_plausible());
    }

    #[test]
    fn harmonic_gaps_are_dependent() {
        let h0 = crate::scales::diag(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut h1 = Array2::zeros((6, 6));
        for i in 0..5 {
            h1[[i, i + 1]] = c(1.0);
            h1[[i + 1, i]] = c(1.0);
        }
        let rep = chambrion_report(&h0, &h1, &eye(6), 5, 1e-12).unwrap();
        assert!(rep.rationally_dependent());
        let q = rep.relation.unwrap();
        assert_eq!(q.iter().filter(|x| **x != 0).count(), 2);
        let (rel, _) = integer_relation(&[1.0, 2f64.sqrt(), PI], 20, 1e-12);
        assert!(rel.is_none());
    }

    fn two_level() -> (CMat, CMat, CVec, CVec) {
        let h0 = array![[c(0.0), c(0.0)], [c(0.0), c(1.0)]];
        let h1 = array![[c(0.0), c(1.0)], [c(1.0), c(0.0)]];
        (h0, h1, array![c(1.0), c(0.0)], array![c(0.0), c(1.0)])
    }

    #[test]
    fn rabi_closed_form() {
        let (h0, h1, e0, e1) = two_level();
        let (v, t) = (0.3, 2.7);
        let u = step_operator(&(&h0 + &h1.mapv(|z| z * v)), &eye(2), t).unwrap();
        let p = u.dot(&e0)[1].norm_sqr();
        let w = (1.0 + 4.0 * v * v).sqrt();
        let exact = 4.0 * v * v / (1.0 + 4.0 * v * v) * (w * t / 2.0).sin().powi(2);
        assert!((p - exact).abs() < 1e-12);
        assert!((fidelity(&e1, &u.dot(&e0), &eye(2)) - exact.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_level_search_reaches_target() {
        let (h0, h1, e0, e1) = two_level();
        let opts = SearchOptions { duration: 20.0, pieces: 40, r: 0.5, ..Default::default() };
        let out = synthesize_piecewise_control(&h0, &h1, &eye(2), &e0, &e1, &opts).unwrap();
        assert!(out.fidelity > 0.99, "{}", out.fidelity);
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((out.fidelity - out.model_fidelity).abs() < 1e-10);
        let aux = FormLinearHamiltonian::new(h0.clone(), vec![(h1.clone(), out.v.clone())], eye(2)).unwrap();
        let fin = crate::dynamics::propagate_piecewise_constant(&aux, 0.0, 20.0).unwrap().apply(&e0);
        let phased = e1.mapv(|z| z * C64::from_polar(1.0, 0.7));
        assert!((fidelity(&phased, &fin, &eye(2)) - out.fidelity).abs() < 1e-12);
    }

    #[test]
    fn identity_transfer_needs_no_control() {
        let (h0, h1, e0, _) = two_level();
        let opts = SearchOptions { duration: 1e-9, pieces: 1, r: 0.5, ..Default::default() };
        let out = synthesize_piecewise_control(&h0, &h1, &eye(2), &e0, &e0, &opts).unwrap();
        assert!(out.fidelity > 1.0 - 1e-12);
        assert_eq!(out.v.eval(0.0).unwrap(), 0.0);
        let bad = synthesize_piecewise_control(&h0, &h1, &eye(2), &e0, &e0.mapv(|z| z * 2.0), &opts);
        assert!(matches!(bad, Err(Error::NormMismatch(..))));
    }

    #[test]
    fn lift_examples() {
        let zero = CoefficientSignal::constant(0.0, 1.0, 0.0).unwrap();
        let flat = lift_to_induction(&zero, 0.3, 5).unwrap();
        assert!((0..=10).all(|i| (flat.eval_piece(flat.piece_index(i as f64 / 10.0), i as f64 / 10.0) - 0.3).abs() < 1e-15));

        let r = 2.0;
        let full = CoefficientSignal::constant(0.0, 1.0, r).unwrap();
        let u = lift_to_induction(&full, 0.0, 4).unwrap();
        assert_eq!(u.pieces().len(), 4);
        for k in 0..4 {
            let end = u.eval_piece(k, u.breaks()[k + 1]);
            assert!((end - r / 4.0).abs() < 1e-14);
        }
        let split = CoefficientSignal::piecewise_constant(vec![0.0, 0.3, 1.0], &[1.0, -1.0]).unwrap();
        assert_eq!(lift_to_induction(&split, 0.0, 4).unwrap().pieces().len(), 5);
        assert_eq!(max_slope(&lift_to_induction(&split, 0.0, 4).unwrap()), 1.0);
    }

    #[test]
    fn sawtooth_l1_exact() {
        let (r, t, u0) = (1.0, 1.0, 1.0);
        let v = CoefficientSignal::constant(0.0, t, r / 2.0).unwrap();
        let c0 = CoefficientSignal::constant(0.0, t, u0).unwrap();
        for n in [1usize, 2, 4, 8, 16, 32] {
            let un = lift_to_induction(&v, u0, n).unwrap();
            let d = un.l1_distance(&c0);
            assert!((d - r * t * t / (4.0 * n as f64)).abs() < 1e-14);
            let d2 = un.square().unwrap().l1_distance(&c0.square().unwrap());
            let (b1, b2) = sawtooth_bounds(u0, r, t, n);
            assert!(d <= b1 && d2 <= b2);
        }
    }

    #[test]
    fn endpoint_holds() {
        let u = lift_to_induction(&CoefficientSignal::constant(0.0, 1.0, 1.0).unwrap(), 0.2, 2).unwrap();
        assert!(endpoint_match(&u, 0.2, 0.9, 0.0, 0.0).is_err());
        let m = endpoint_match(&u, 0.2, 0.7, 0.25, 0.5).unwrap();
        assert_eq!((m.start(), m.end()), (0.0, 1.75));
        assert_eq!(m.eval(0.1).unwrap(), 0.2);
        assert_eq!(m.eval(1.6).unwrap(), 0.7);
        assert!((m.eval(0.5).unwrap() - 0.45).abs() < 1e-14);
        let same = endpoint_match(&u.shifted(0.0), 0.2, u.eval_piece(1, 1.0), 0.0, 0.0).unwrap();
        assert_eq!(same, u);
    }

    #[test]
    fn hold_penalty_vanishes_linearly() {
        let sys = lasso_system(0.1).induction;
        let h = sys.static_hamiltonian(0.2);
        let scale = HilbertScale::new(&h, sys.mass(), 0.0).unwrap();
        let (_, vecs) = sys.eigenstates(0.2, 3).unwrap();
        let psi: CVec = &vecs.column(0) + &vecs.column(2);
        let limit = scale.norm_minus(&crate::linalg::hpd_inverse(sys.mass()).unwrap().dot(&h.dot(&psi)));
        let mut errors = Vec::new();
        for p in [1e-2, 1e-3, 1e-4] {
            let ratio = hold_penalty(&h, sys.mass(), &scale, &psi, p).unwrap() / p;
            errors.push((ratio - limit).abs() / limit);
        }
        assert!(errors[2] < 1e-3 && errors[2] < errors[0]);
        let eig = vecs.column(0).to_owned();
        let before = scale.norm_minus(&eig);
        let after = step_operator(&h, sys.mass(), 0.3).unwrap().dot(&eig);
        assert!((scale.norm_minus(&after) - before).abs() < 1e-12);
    }
}
