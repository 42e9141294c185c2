//! Numerical instances of the stability bound
//! `‖U_j(t,s) − U_k(t,s)‖₊,₋ ≤ L ∫ₛᵗ ‖H_j(τ) − H_k(τ)‖₊,₋ dτ`
//! and of the assumptions behind it.

use crate::dynamics::{merge_breaks, plan_midpoint, plan_piecewise_constant, FormLinearHamiltonian, Propagator, Stepper};
use crate::error::{Error, Result};
use crate::linalg::{generalized_eig, hermitize, CMat, CVec};
use crate::quadrature::simpson;
use crate::scales::{scale_equivalence, HilbertScale};

/// Minimum Simpson panels per smooth piece.
pub const PANELS: usize = 64;
/// Relative change under panel doubling above which a budget is flagged.
pub const REFINEMENT_TOL: f64 = 1e-8;

/// Options for [`check_assumptions`].
#[derive(Debug, Clone)]
pub struct AssumptionOptions {
    /// Sample times per piece for the lower bound and the scale constant.
    pub samples_per_piece: usize,
    /// Simpson panels per piece for the derivative budget.
    pub panels: usize,
    /// Largest admissible `m`; exceeding it is an A1 violation.
    pub m_cap: f64,
    /// Largest admissible equivalence constant.
    pub c_cap: f64,
    /// Time of the reference scale, taken on the first family member.
    pub anchor: f64,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        AssumptionOptions { samples_per_piece: 3, panels: PANELS, m_cap: 1e6, c_cap: 1e8, anchor: f64::NAN }
    }
}

/// Measured constants of (A1), (A3), (A4).
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub m: f64,
    pub c: f64,
    pub big_m: f64,
    /// Time and member where the lowest eigenvalue occurred.
    pub lambda_min: (f64, usize, f64),
    /// Set when doubling the panels moved some budget by more than
    /// [`REFINEMENT_TOL`] (relative).
    pub quadrature_flagged: bool,
    pub smoothness: Vec<crate::dynamics::Smoothness>,
}

fn sample_times(ham: &FormLinearHamiltonian, per_piece: usize) -> Vec<f64> {
    let (s, t) = ham.domain();
    let mut out = Vec::new();
    for w in ham.grid(s, t).windows(2) {
        for j in 0..per_piece.max(1) {
            out.push(w[0] + (w[1] - w[0]) * (j as f64 + 0.5) / per_piece.max(1) as f64);
        }
    }
    out
}

/// `Σ_j ∫_{I_j} f` by Simpson on every piece of `grid`; also returns
/// whether doubling the panels changed the result beyond tolerance.
/// Non-finite samples mean the budget diverges.
pub fn l1_budget<F: FnMut(f64, f64) -> Result<f64>>(mut f: F, grid: &[f64], panels: usize) -> Result<(f64, bool)> {
    let mut total = 0.0;
    let mut flagged = false;
    for (j, w) in grid.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let anchor = 0.5 * (a + b);
        let mut run = |n: usize| -> Result<f64> {
            let mut err = None;
            let v = simpson(
                |t| match f(t, anchor) {
                    Ok(x) if x.is_finite() => x,
                    Ok(x) => {
                        err.get_or_insert(Error::A4Divergent { piece: j, detail: format!("value {x} at t = {t}") });
                        f64::NAN
                    }
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                a,
                b,
                n,
            );
            match err {
                Some(e) => Err(e),
                None => Ok(v),
            }
        };
        let coarse = run(panels.max(PANELS))?;
        let fine = run(2 * panels.max(PANELS))?;
        if (fine - coarse).abs() > REFINEMENT_TOL * fine.abs().max(1.0) {
            flagged = true;
        }
        total += fine;
    }
    if !total.is_finite() {
        return Err(Error::A4Divergent { piece: grid.len().saturating_sub(2), detail: "budget is not finite".into() });
    }
    Ok((total, flagged))
}

/// Measures `m` (A1), `c` (A3) and `M` (A4) for a family sharing the mass
/// matrix. `C̃_n(t) = ‖dH_n/dt‖₊,₋` is taken in the reference scale.
pub fn check_assumptions(family: &[FormLinearHamiltonian], opts: &AssumptionOptions) -> Result<AssumptionReport> {
    let first = family.first().ok_or_else(|| Error::InvalidSignal("empty family".into()))?;
    let mass = &first.mass;
    for h in family {
        if h.mass != *mass {
            return Err(Error::DimensionMismatch("family members use different mass matrices".into()));
        }
    }
    // (A1)
    let mut lowest = (f64::INFINITY, 0usize, 0.0);
    for (n, h) in family.iter().enumerate() {
        for t in sample_times(h, opts.samples_per_piece) {
            let e = generalized_eig(&hermitize(&h.eval(t)?), mass)?;
            if e.values[0] < lowest.0 {
                lowest = (e.values[0], n, t);
            }
        }
    }
    let m = (-lowest.0).max(0.0);
    if m > opts.m_cap || !m.is_finite() {
        return Err(Error::A1Violation { lambda_min: lowest.0, t: lowest.2 });
    }
    // (A3)
    let anchor = if opts.anchor.is_finite() { opts.anchor } else { first.domain().0 };
    let reference = HilbertScale::new(&hermitize(&first.eval(anchor)?), mass, m)?;
    let mut c: f64 = 1.0;
    for h in family {
        for t in sample_times(h, opts.samples_per_piece) {
            let s = HilbertScale::new(&hermitize(&h.eval(t)?), mass, m)?;
            c = c.max(scale_equivalence(&s, &reference)?);
        }
    }
    if !c.is_finite() || c > opts.c_cap {
        return Err(Error::A3Unbounded(c));
    }
    // (A4)
    let mut big_m: f64 = 0.0;
    let mut flagged = false;
    for h in family {
        let (s, t) = h.domain();
        let grid = h.grid(s, t);
        let (budget, flag) = l1_budget(
            |tau, anchor| reference.opnorm_plus_minus(&h.combine_derivative(&h.derivative_coefficients_at(tau, anchor))),
            &grid,
            opts.panels,
        )?;
        flagged |= flag;
        big_m = big_m.max(budget);
    }
    let smoothness = family
        .iter()
        .map(|h| h.terms.iter().map(|(_, f)| f.smoothness(1e-12)).min().unwrap_or(crate::dynamics::Smoothness::C2))
        .collect();
    Ok(AssumptionReport { m, c, big_m, lambda_min: (lowest.0, lowest.1, lowest.2), quadrature_flagged: flagged, smoothness })
}

/// Propagator over `[s, t]`: exact if every coefficient is piecewise
/// constant there, exponential midpoint with steps `≤ dt` otherwise.
pub fn propagate_auto(ham: &FormLinearHamiltonian, s: f64, t: f64, dt: f64) -> Result<Propagator> {
    let steps = match plan_piecewise_constant(ham, s, t) {
        Ok(steps) => steps,
        Err(Error::NotPiecewiseConstant { .. }) => plan_midpoint(ham, s, t, dt)?,
        Err(e) => return Err(e),
    };
    Stepper::new(ham).propagator(&steps, s, t)
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs_integral: f64,
    pub ratio: f64,
    /// `‖f_{j,i} − f_{k,i}‖_{L¹}` per coefficient channel.
    pub l1: Vec<f64>,
}

/// `∫ₛᵗ ‖H_j(τ) − H_k(τ)‖₊,₋ dτ` in the given scale.
pub fn distance_integral(hj: &FormLinearHamiltonian, hk: &FormLinearHamiltonian, s: f64, t: f64, scale: &HilbertScale) -> Result<f64> {
    let grid = merge_breaks([hj.grid(s, t).as_slice(), hk.grid(s, t).as_slice()]);
    let (v, _) = l1_budget(
        |tau, anchor| {
            let d = hj.combine(&hj.coefficients_at(tau, anchor)) - hk.combine(&hk.coefficients_at(tau, anchor));
            scale.opnorm_plus_minus(&d)
        },
        &grid,
        PANELS,
    )?;
    Ok(v)
}

/// Both sides of the stability bound for one pair.
pub fn stability_pair(hj: &FormLinearHamiltonian, hk: &FormLinearHamiltonian, s: f64, t: f64, scale: &HilbertScale, dt: f64) -> Result<StabilityReport> {
    let uj = propagate_auto(hj, s, t, dt)?;
    let uk = propagate_auto(hk, s, t, dt)?;
    let lhs = scale.opnorm_plus_minus_operator(&(&uj.u - &uk.u))?;
    let rhs = distance_integral(hj, hk, s, t, scale)?;
    let l1 = hj.terms.iter().zip(&hk.terms).map(|((_, f), (_, g))| f.l1_distance(g)).collect();
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(StabilityReport { lhs, rhs_integral: rhs, ratio, l1 })
}

/// One member of a convergence sweep with its coefficient distances to the
/// limit and the analytic bounds they must satisfy.
pub struct SweepMember {
    pub ham: FormLinearHamiltonian,
    pub l1_u: f64,
    pub l1_u2: f64,
    pub bound_u: f64,
    pub bound_u2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub l1_u: f64,
    pub l1_u2: f64,
    pub bound_u: f64,
    pub bound_u2: f64,
    pub lhs: f64,
    /// `‖(U_n − U₀)ψ‖` per probe.
    pub strong: Vec<f64>,
}

impl SweepRow {
    pub fn bounds_hold(&self) -> bool {
        self.l1_u <= self.bound_u * (1.0 + 1e-12) + 1e-14 && self.l1_u2 <= self.bound_u2 * (1.0 + 1e-12) + 1e-14
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Least-squares slope of `log lhs` against `log n`.
    pub fn slope(&self) -> f64 {
        loglog_slope(&self.rows.iter().map(|r| (r.n as f64, r.lhs)).collect::<Vec<_>>())
    }

    /// `max lhs / L¹` over the first `k` rows.
    pub fn empirical_constant(&self, k: usize) -> f64 {
        self.rows.iter().take(k).map(|r| r.lhs / r.l1_u).fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("n,l1_u,l1_u2,bound_u,bound_u2,lhs_plus_minus,strong_max\n");
        for r in &self.rows {
            let strong = r.strong.iter().copied().fold(0.0, f64::max);
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.n, r.l1_u, r.l1_u2, r.bound_u, r.bound_u2, r.lhs, strong
            ));
        }
        out
    }
}

pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Propagates the limit and every member over `[s, t]` and tabulates the
/// distances. `build(n)` supplies the members.
pub fn convergence_sweep<B: Fn(usize) -> Result<SweepMember>>(
    limit: &FormLinearHamiltonian,
    build: B,
    n_list: &[usize],
    s: f64,
    t: f64,
    dt: f64,
    scale: &HilbertScale,
    probes: &[CVec],
) -> Result<SweepTable> {
    let u0 = propagate_auto(limit, s, t, dt)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let member = build(n)?;
        let un = propagate_auto(&member.ham, s, t, dt)?;
        let diff = &un.u - &u0.u;
        let lhs = scale.opnorm_plus_minus_operator(&diff)?;
        let strong = strong_convergence_check(&diff, probes, &limit.mass);
        rows.push(SweepRow { n, l1_u: member.l1_u, l1_u2: member.l1_u2, bound_u: member.bound_u, bound_u2: member.bound_u2, lhs, strong });
    }
    Ok(SweepTable { rows })
}

/// `‖(U_n − U₀)ψ‖` for each probe, given the difference `U_n − U₀`.
pub fn strong_convergence_check(diff: &CMat, probes: &[CVec], mass: &CMat) -> Vec<f64> {
    probes.iter().map(|psi| crate::dynamics::mass_norm(&diff.dot(psi), mass)).collect()
}

/// Both sides of `‖A_j⁻¹ − A_k⁻¹‖₋,₊ ≤ c⁴‖H_j − H_k‖₊,₋`, with
/// `A = H + (m + 1)M` and norms of the reference scale.
pub fn inverse_convergence(hj: &CMat, hk: &CMat, m: f64, c: f64, reference: &HilbertScale) -> Result<(f64, f64)> {
    let mass = &reference.mass;
    let shift = |h: &CMat| hermitize(&(h + &mass.mapv(|z| z * (m + 1.0))));
    let aj = HilbertScale::inverse_operator(&shift(hj), mass)?;
    let ak = HilbertScale::inverse_operator(&shift(hk), mass)?;
    let lhs = reference.opnorm_minus_plus(&(&aj - &ak))?;
    let rhs = c.powi(4) * reference.opnorm_plus_minus(&(hj - hk))?;
    Ok((lhs, rhs))
}

/// Both sides of `‖ψ(t)‖_{+,t} ≤ e^{(3/2)∫C}‖ψ(s)‖_{+,s}` and
/// `‖ψ(t)‖_{−,t} ≤ e^{(1/2)∫C}‖ψ(s)‖_{−,s}`, with the scales anchored at
/// `H(s)` and `H(t)` and `C(τ) = max|λ(dH/dτ, H(τ) + (m + 1)M)|`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthReport {
    pub budget: f64,
    pub plus: (f64, f64),
    pub minus: (f64, f64),
}

impl GrowthReport {
    /// `min(rhs − lhs)` over both bounds.
    pub fn slack(&self) -> f64 {
        (self.plus.1 - self.plus.0).min(self.minus.1 - self.minus.0)
    }
}

pub fn growth_bounds(ham: &FormLinearHamiltonian, psi: &CVec, s: f64, t: f64, m: f64, dt: f64) -> Result<GrowthReport> {
    let u = propagate_auto(ham, s, t, dt)?;
    let out = u.apply(psi);
    let at = |tau: f64| HilbertScale::new(&hermitize(&ham.eval(tau)?), &ham.mass, m);
    let (ss, st) = (at(s)?, at(t)?);
    let budget = ham.derivative_budget(s, t, m, PANELS)?;
    Ok(GrowthReport {
        budget,
        plus: (st.norm_plus(&out), (1.5 * budget).exp() * ss.norm_plus(psi)),
        minus: (st.norm_minus(&out), (0.5 * budget).exp() * ss.norm_minus(psi)),
    })
}
