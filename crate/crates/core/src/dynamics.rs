//! Form-linear time-dependent Hamiltonians and their unitary propagators.
//!
//! Coefficients are piecewise polynomials in time. Propagators act on reduced
//! coefficient vectors and are unitary for the mass inner product `x†My`.
//! Every step is an exact exponential `exp(−iτM⁻¹H) = W e^{−iτΛ} W†M` of a
//! frozen generator, so unitarity holds to eigensolver accuracy no matter
//! which scheme picks the generator.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{adjoint, cholesky, fro_norm, generalized_eig, hermitian_eig, hermitize, inner, solve_lower, CMat, CVec, C64, I};
use crate::quadrature::{simpson, Poly};
use crate::scales::HilbertScale;

/// Highest polynomial degree accepted for a signal piece.
pub const MAX_DEGREE: usize = 3;
/// Breakpoints closer than this are treated as equal.
const TIME_TOL: f64 = 1e-12;

/// Smoothness of a signal across its breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Smoothness {
    /// Polynomial on each piece, jumps allowed.
    Piecewise,
    C1,
    C2,
}

/// Piecewise polynomial `f(t) = p_k(t − t_k)` on `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSignal {
    breaks: Vec<f64>,
    pieces: Vec<Poly>,
}

impl CoefficientSignal {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Poly>) -> Result<Self> {
        if breaks.len() < 2 || pieces.len() + 1 != breaks.len() {
            return Err(Error::InvalidSignal(format!("{} breakpoints for {} pieces", breaks.len(), pieces.len())));
        }
        if breaks.iter().any(|t| !t.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSignal("breakpoints must be finite and strictly increasing".into()));
        }
        for (k, p) in pieces.iter().enumerate() {
            if p.0.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidSignal(format!("piece {k} has non-finite coefficients")));
            }
            if p.degree() > MAX_DEGREE {
                return Err(Error::InvalidSignal(format!("piece {k} has degree {} > {MAX_DEGREE}", p.degree())));
            }
        }
        Ok(CoefficientSignal { breaks, pieces })
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![Poly::constant(value)])
    }

    pub fn piecewise_constant(breaks: Vec<f64>, values: &[f64]) -> Result<Self> {
        Self::new(breaks, values.iter().map(|&v| Poly::constant(v)).collect())
    }

    /// Continuous piecewise-linear interpolant of `(times, values)`.
    pub fn linear_interpolant(times: Vec<f64>, values: &[f64]) -> Result<Self> {
        if values.len() != times.len() {
            return Err(Error::InvalidSignal("knots and values differ in length".into()));
        }
        let pieces = (0..times.len().saturating_sub(1))
            .map(|k| Poly::linear(values[k], (values[k + 1] - values[k]) / (times[k + 1] - times[k])))
            .collect();
        Self::new(times, pieces)
    }

    /// Piecewise cubic Hermite interpolant of `f` with derivative `df`.
    pub fn cubic_hermite<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(breaks: Vec<f64>, f: F, df: G) -> Result<Self> {
        let mut pieces = Vec::with_capacity(breaks.len().saturating_sub(1));
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = b - a;
            let (fa, fb, da, db) = (f(a), f(b), df(a), df(b));
            let c2 = (3.0 * (fb - fa) / h - 2.0 * da - db) / h;
            let c3 = (da + db - 2.0 * (fb - fa) / h) / (h * h);
            pieces.push(Poly(vec![fa, da, c2, c3]));
        }
        Self::new(breaks, pieces)
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Poly] {
        &self.pieces
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t < self.start() - TIME_TOL || t > self.end() + TIME_TOL || !t.is_finite() {
            return Err(Error::OutOfDomain { t, start: self.start(), end: self.end() });
        }
        Ok(())
    }

    /// Index of the piece containing `t`; at an interior breakpoint the
    /// piece to the right.
    pub fn piece_index(&self, t: f64) -> usize {
        let k = self.breaks.partition_point(|&b| b <= t);
        k.clamp(1, self.pieces.len()) - 1
    }

    /// Value on piece `k`, extended polynomially outside it.
    pub fn eval_piece(&self, k: usize, t: f64) -> f64 {
        self.pieces[k].eval(t - self.breaks[k])
    }

    pub fn derivative_piece(&self, k: usize, t: f64) -> f64 {
        self.pieces[k].derivative().eval(t - self.breaks[k])
    }

    /// Right-continuous value (left limit at the final time).
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(self.eval_piece(self.piece_index(t), t))
    }

    /// Derivative away from breakpoints.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        if self.breaks.iter().any(|b| (b - t).abs() <= TIME_TOL) {
            return Err(Error::AtBreakpoint(t));
        }
        Ok(self.derivative_piece(self.piece_index(t), t))
    }

    /// Derivative as a signal on the same pieces.
    pub fn derivative_signal(&self) -> CoefficientSignal {
        CoefficientSignal { breaks: self.breaks.clone(), pieces: self.pieces.iter().map(Poly::derivative).collect() }
    }

    /// Pointwise square; fails if the square exceeds [`MAX_DEGREE`].
    pub fn square(&self) -> Result<CoefficientSignal> {
        Self::new(self.breaks.clone(), self.pieces.iter().map(|p| p.mul(p)).collect())
    }

    pub fn is_constant_on_pieces(&self, start: f64, end: f64) -> bool {
        self.pieces.iter().enumerate().all(|(k, p)| {
            let (a, b) = (self.breaks[k], self.breaks[k + 1]);
            b <= start + TIME_TOL || a >= end - TIME_TOL || p.degree() == 0
        })
    }

    /// Largest jumps of value, first and second derivative at interior
    /// breakpoints.
    pub fn jumps(&self) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for k in 1..self.pieces.len() {
            let t = self.breaks[k];
            let (mut l, mut r) = (self.pieces[k - 1].clone(), self.pieces[k].clone());
            let dl = t - self.breaks[k - 1];
            for j in out.iter_mut() {
                *j = j.max((l.eval(dl) - r.eval(0.0)).abs());
                l = l.derivative();
                r = r.derivative();
            }
        }
        out
    }

    pub fn smoothness(&self, tol: f64) -> Smoothness {
        let j = self.jumps();
        if j[0] > tol || j[1] > tol {
            Smoothness::Piecewise
        } else if j[2] > tol {
            Smoothness::C1
        } else {
            Smoothness::C2
        }
    }

    /// Sorted union of breakpoints of two signals.
    pub fn common_breaks(&self, other: &CoefficientSignal) -> Vec<f64> {
        merge_breaks([self.breaks.as_slice(), other.breaks.as_slice()])
    }

    /// Exact `∫|f − g|` over the common domain.
    pub fn l1_distance(&self, other: &CoefficientSignal) -> f64 {
        let grid = self.common_breaks(other);
        let (lo, hi) = (self.start().max(other.start()), self.end().min(other.end()));
        let mut total = 0.0;
        for w in grid.windows(2) {
            let (a, b) = (w[0].max(lo), w[1].min(hi));
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let (i, j) = (self.piece_index(mid), other.piece_index(mid));
            let p = self.pieces[i].shift(a - self.breaks[i]);
            let q = other.pieces[j].shift(a - other.breaks[j]);
            total += p.sub(&q).abs_integral(0.0, b - a);
        }
        total
    }

    /// Signal on `[start − q, end + p]` holding the boundary values on the
    /// added intervals.
    pub fn with_holds(&self, q: f64, p: f64) -> Result<CoefficientSignal> {
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        if q > 0.0 {
            breaks.push(self.start() - q);
            pieces.push(Poly::constant(self.eval_piece(0, self.start())));
        }
        breaks.extend_from_slice(&self.breaks);
        pieces.extend(self.pieces.iter().cloned());
        if p > 0.0 {
            let last = self.pieces.len() - 1;
            pieces.push(Poly::constant(self.eval_piece(last, self.end())));
            breaks.push(self.end() + p);
        }
        Self::new(breaks, pieces)
    }

    /// Same values on a time axis shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> CoefficientSignal {
        CoefficientSignal { breaks: self.breaks.iter().map(|b| b + dt).collect(), pieces: self.pieces.clone() }
    }
}

/// Sorted union of several breakpoint lists with near-duplicates merged.
pub fn merge_breaks<'a, I: IntoIterator<Item = &'a [f64]>>(lists: I) -> Vec<f64> {
    let mut all: Vec<f64> = lists.into_iter().flatten().copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL * (1.0 + b.abs()));
    all
}

/// `H(t) = H₀ + Σ f_i(t) H_i` on reduced coordinates.
#[derive(Debug, Clone)]
pub struct FormLinearHamiltonian {
    pub h0: CMat,
    pub terms: Vec<(CMat, CoefficientSignal)>,
    pub mass: CMat,
    start: f64,
    end: f64,
    breaks: Vec<f64>,
}

impl FormLinearHamiltonian {
    pub fn new(h0: CMat, terms: Vec<(CMat, CoefficientSignal)>, mass: CMat) -> Result<Self> {
        let n = h0.nrows();
        if h0.ncols() != n || mass.dim() != (n, n) {
            return Err(Error::DimensionMismatch(format!("H₀ is {:?}, mass is {:?}", h0.dim(), mass.dim())));
        }
        for (k, (h, _)) in terms.iter().enumerate() {
            if h.dim() != (n, n) {
                return Err(Error::DimensionMismatch(format!("structure matrix {} is {:?}", k + 1, h.dim())));
            }
        }
        let (start, end) = match terms.first() {
            Some((_, f)) => (f.start(), f.end()),
            None => (0.0, f64::INFINITY),
        };
        for (_, f) in &terms {
            if (f.start() - start).abs() > TIME_TOL || (f.end() - end).abs() > TIME_TOL {
                return Err(Error::InvalidSignal("coefficient signals have different domains".into()));
            }
        }
        let breaks = if terms.is_empty() {
            Vec::new()
        } else {
            merge_breaks(terms.iter().map(|(_, f)| f.breaks()))
        };
        Ok(FormLinearHamiltonian { h0, terms, mass, start, end, breaks })
    }

    /// Time-independent Hamiltonian, defined on all of `[0, ∞)`.
    pub fn constant(h: CMat, mass: CMat) -> Result<Self> {
        Self::new(h, Vec::new(), mass)
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Breakpoints inside `[s, t]`, including both ends, ascending.
    pub fn grid(&self, s: f64, t: f64) -> Vec<f64> {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let mut g = vec![lo];
        g.extend(self.breaks.iter().copied().filter(|&b| b > lo + TIME_TOL && b < hi - TIME_TOL));
        g.push(hi);
        g
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t < self.start - TIME_TOL || t > self.end + TIME_TOL || !t.is_finite() {
            return Err(Error::OutOfDomain { t, start: self.start, end: self.end });
        }
        Ok(())
    }

    /// Coefficients at `t`, taking each signal's piece from `anchor`
    /// (a time strictly inside the relevant piece).
    pub fn coefficients_at(&self, t: f64, anchor: f64) -> Vec<f64> {
        self.terms.iter().map(|(_, f)| f.eval_piece(f.piece_index(anchor), t)).collect()
    }

    pub fn derivative_coefficients_at(&self, t: f64, anchor: f64) -> Vec<f64> {
        self.terms.iter().map(|(_, f)| f.derivative_piece(f.piece_index(anchor), t)).collect()
    }

    /// `H₀ + Σ f_i H_i` for explicit coefficient values.
    pub fn combine(&self, coeffs: &[f64]) -> CMat {
        let mut h = self.h0.clone();
        for ((hi, _), &f) in self.terms.iter().zip(coeffs) {
            if f != 0.0 {
                h.scaled_add(C64::new(f, 0.0), hi);
            }
        }
        h
    }

    /// `Σ f_i' H_i` for explicit derivative values.
    pub fn combine_derivative(&self, dcoeffs: &[f64]) -> CMat {
        let n = self.dim();
        let mut d = Array2::zeros((n, n));
        for ((hi, _), &f) in self.terms.iter().zip(dcoeffs) {
            if f != 0.0 {
                d.scaled_add(C64::new(f, 0.0), hi);
            }
        }
        d
    }

    pub fn eval(&self, t: f64) -> Result<CMat> {
        self.check_domain(t)?;
        let coeffs: Vec<f64> = self.terms.iter().map(|(_, f)| f.eval_piece(f.piece_index(t), t)).collect();
        Ok(self.combine(&coeffs))
    }

    pub fn eval_derivative(&self, t: f64) -> Result<CMat> {
        self.check_domain(t)?;
        let mut d = Vec::with_capacity(self.terms.len());
        for (_, f) in &self.terms {
            d.push(f.derivative(t)?);
        }
        Ok(self.combine_derivative(&d))
    }

    /// `C(t) = max|λ(dH/dt, H(t) + (m + 1)M)|`.
    pub fn derivative_bound(&self, t: f64, m: f64) -> Result<f64> {
        let dh = self.eval_derivative(t)?;
        pencil_abs_max(&dh, &self.shifted(&self.eval(t)?, m))
    }

    /// Same as [`Self::derivative_bound`] with pieces taken from `anchor`,
    /// giving one-sided values at breakpoints.
    pub fn derivative_bound_at(&self, t: f64, anchor: f64, m: f64) -> Result<f64> {
        let dh = self.combine_derivative(&self.derivative_coefficients_at(t, anchor));
        let h = self.combine(&self.coefficients_at(t, anchor));
        pencil_abs_max(&dh, &self.shifted(&h, m))
    }

    /// `h + (m + 1)M`.
    pub fn shifted(&self, h: &CMat, m: f64) -> CMat {
        let mut a = h.clone();
        a.scaled_add(C64::new(m + 1.0, 0.0), &self.mass);
        hermitize(&a)
    }

    /// Smallest generalized eigenvalue of `H(t)` over a sample of
    /// `per_piece` interior points of every piece, and where it occurs.
    pub fn sampled_lambda_min(&self, s: f64, t: f64, per_piece: usize) -> Result<(f64, f64)> {
        let mut best = (f64::INFINITY, s);
        for w in self.grid(s, t).windows(2) {
            for j in 0..per_piece.max(1) {
                let tau = w[0] + (w[1] - w[0]) * (j as f64 + 0.5) / per_piece.max(1) as f64;
                let e = generalized_eig(&hermitize(&self.eval(tau)?), &self.mass)?;
                if e.values[0] < best.0 {
                    best = (e.values[0], tau);
                }
            }
        }
        Ok(best)
    }

    /// `∫_s^t C(τ) dτ` by composite Simpson on every smooth piece.
    pub fn derivative_budget(&self, s: f64, t: f64, m: f64, panels: usize) -> Result<f64> {
        let mut total = 0.0;
        for w in self.grid(s, t).windows(2) {
            let (a, b) = (w[0], w[1]);
            let anchor = 0.5 * (a + b);
            let mut err = None;
            let val = simpson(
                |tau| match self.derivative_bound_at(tau, anchor, m) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                a,
                b,
                panels,
            );
            if let Some(e) = err {
                return Err(e);
            }
            total += val;
        }
        Ok(total)
    }
}

/// `max |λ|` of the pencil `(t, a)` for positive definite `a`.
pub fn pencil_abs_max(t: &CMat, a: &CMat) -> Result<f64> {
    if t.iter().all(|z| z.norm() == 0.0) {
        return Ok(0.0);
    }
    let l = cholesky(a)?;
    let x = solve_lower(&l, t, false)?;
    let y = solve_lower(&l, &adjoint(&x), false)?;
    let e = hermitian_eig(&hermitize(&y))?;
    Ok(e.values[0].abs().max(e.values[e.values.len() - 1].abs()))
}

/// Scheme used for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub method: Method,
    pub start: f64,
    pub dt: f64,
}

/// Two-parameter propagator `U(t, s)` on reduced coefficients.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub u: CMat,
    pub s: f64,
    pub t: f64,
    pub log: Vec<StepRecord>,
}

impl Propagator {
    pub fn identity(n: usize, s: f64) -> Self {
        Propagator { u: Array2::eye(n), s, t: s, log: Vec::new() }
    }

    pub fn apply(&self, psi: &CVec) -> CVec {
        self.u.dot(psi)
    }

    /// `later ∘ self`, requiring `later.s == self.t`.
    pub fn then(&self, later: &Propagator) -> Result<Propagator> {
        if (later.s - self.t).abs() > TIME_TOL * (1.0 + self.t.abs()) {
            return Err(Error::DimensionMismatch(format!("cannot compose U({}, {}) after U({}, {})", later.t, later.s, self.t, self.s)));
        }
        let mut log = self.log.clone();
        log.extend(later.log.iter().copied());
        Ok(Propagator { u: later.u.dot(&self.u), s: self.s, t: later.t, log })
    }

    /// Inverse in the mass geometry: `M⁻¹U†M`, i.e. `U(s, t)`.
    pub fn reversed(&self, mass: &CMat) -> Result<Propagator> {
        let l = cholesky(mass)?;
        let rhs = adjoint(&self.u).dot(mass);
        let y = solve_lower(&l, &rhs, false)?;
        let u = solve_lower(&l, &y, true)?;
        Ok(Propagator { u, s: self.t, t: self.s, log: Vec::new() })
    }

    /// `‖U†MU − M‖_F / ‖M‖_F`.
    pub fn unitarity_defect(&self, mass: &CMat) -> f64 {
        unitarity_defect(&self.u, mass)
    }
}

pub fn unitarity_defect(u: &CMat, mass: &CMat) -> f64 {
    fro_norm(&(adjoint(u).dot(&mass.dot(u)) - mass)) / fro_norm(mass)
}

/// `exp(−iτM⁻¹H)` on coefficient vectors.
pub fn step_operator(h: &CMat, mass: &CMat, tau: f64) -> Result<CMat> {
    let e = generalized_eig(&hermitize(h), mass)?;
    Ok(e.operator_function(mass, |l| (-I * (tau * l)).exp()))
}

/// Memo of step operators keyed by the quantized step length and generator
/// coefficients. Reuse changes results by at most the quantum.
#[derive(Debug)]
pub struct StepCache {
    quantum: f64,
    capacity: usize,
    map: HashMap<Vec<i64>, Arc<CMat>>,
    pub hits: usize,
    pub misses: usize,
}

impl StepCache {
    /// Cache keeping at most `capacity` operators.
    pub fn new(capacity: usize) -> Self {
        StepCache { quantum: 1e-12, capacity, map: HashMap::new(), hits: 0, misses: 0 }
    }

    /// Cache bounded by an approximate byte budget for `n × n` operators.
    pub fn with_budget(n: usize, bytes: usize) -> Self {
        Self::new((bytes / (16 * n * n).max(1)).max(1))
    }

    fn key(&self, tau: f64, coeffs: &[f64]) -> Vec<i64> {
        std::iter::once(tau).chain(coeffs.iter().copied()).map(|x| (x / self.quantum).round() as i64).collect()
    }

    pub fn get_or_insert<F: FnOnce() -> Result<CMat>>(&mut self, tau: f64, coeffs: &[f64], make: F) -> Result<Arc<CMat>> {
        let key = self.key(tau, coeffs);
        if let Some(op) = self.map.get(&key) {
            self.hits += 1;
            return Ok(op.clone());
        }
        self.misses += 1;
        let op = Arc::new(make()?);
        if self.map.len() < self.capacity {
            self.map.insert(key, op.clone());
        }
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// One frozen-generator step: time, length and the coefficient values used.
#[derive(Debug, Clone)]
pub struct PlannedStep {
    pub start: f64,
    pub dt: f64,
    pub coeffs: Vec<f64>,
    pub method: Method,
}

/// Steps of the piecewise-exact scheme; every piece must be constant.
pub fn plan_piecewise_constant(ham: &FormLinearHamiltonian, s: f64, t: f64) -> Result<Vec<PlannedStep>> {
    ham.check_domain(s)?;
    ham.check_domain(t)?;
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    for (_, f) in &ham.terms {
        if !f.is_constant_on_pieces(lo, hi) {
            return Err(Error::NotPiecewiseConstant { start: lo, end: hi });
        }
    }
    let mut steps: Vec<PlannedStep> = ham
        .grid(s, t)
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            PlannedStep { start: w[0], dt: w[1] - w[0], coeffs: ham.coefficients_at(mid, mid), method: Method::Exact }
        })
        .collect();
    orient(&mut steps, s, t);
    Ok(steps)
}

/// Steps of the exponential-midpoint scheme, aligned to breakpoints, with
/// `ceil(len / dt)` equal steps per piece.
pub fn plan_midpoint(ham: &FormLinearHamiltonian, s: f64, t: f64, dt: f64) -> Result<Vec<PlannedStep>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidSignal(format!("step size {dt} must be positive")));
    }
    ham.check_domain(s)?;
    ham.check_domain(t)?;
    let mut steps = Vec::new();
    for w in ham.grid(s, t).windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let k = ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = len / k as f64;
        let anchor = 0.5 * (w[0] + w[1]);
        for j in 0..k {
            let a = w[0] + j as f64 * h;
            let mid = a + 0.5 * h;
            steps.push(PlannedStep { start: a, dt: h, coeffs: ham.coefficients_at(mid, anchor), method: Method::Midpoint });
        }
    }
    orient(&mut steps, s, t);
    Ok(steps)
}

/// Reverses a forward plan for backward propagation.
fn orient(steps: &mut [PlannedStep], s: f64, t: f64) {
    if t < s {
        steps.reverse();
        for st in steps.iter_mut() {
            st.start += st.dt;
            st.dt = -st.dt;
        }
    }
}

/// Executes planned steps on a full matrix or a state.
pub struct Stepper<'a> {
    pub ham: &'a FormLinearHamiltonian,
    pub cache: Option<&'a mut StepCache>,
}

impl<'a> Stepper<'a> {
    pub fn new(ham: &'a FormLinearHamiltonian) -> Self {
        Stepper { ham, cache: None }
    }

    pub fn with_cache(ham: &'a FormLinearHamiltonian, cache: &'a mut StepCache) -> Self {
        Stepper { ham, cache: Some(cache) }
    }

    pub fn operator(&mut self, step: &PlannedStep) -> Result<Arc<CMat>> {
        let ham = self.ham;
        let make = || step_operator(&ham.combine(&step.coeffs), &ham.mass, step.dt);
        match self.cache.as_deref_mut() {
            Some(cache) => cache.get_or_insert(step.dt, &step.coeffs, make),
            None => Ok(Arc::new(make()?)),
        }
    }

    pub fn propagator(&mut self, steps: &[PlannedStep], s: f64, t: f64) -> Result<Propagator> {
        let mut p = Propagator::identity(self.ham.dim(), s);
        for st in steps {
            let op = self.operator(st)?;
            p.u = op.dot(&p.u);
            p.log.push(StepRecord { method: st.method, start: st.start, dt: st.dt });
        }
        p.t = t;
        Ok(p)
    }

    /// Propagates `psi` and records the state after every step whose end is
    /// within tolerance of one of `dumps` (and the initial state if listed).
    pub fn state(&mut self, steps: &[PlannedStep], psi: &CVec, dumps: &[f64]) -> Result<(CVec, Vec<(f64, CVec)>)> {
        let mut x = psi.clone();
        let mut out = Vec::new();
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        let mut next = 0;
        if let Some(first) = steps.first() {
            while next < dumps.len() && near(dumps[next], first.start) {
                out.push((dumps[next], x.clone()));
                next += 1;
            }
        }
        for st in steps {
            let op = self.operator(st)?;
            x = op.dot(&x);
            let end = st.start + st.dt;
            while next < dumps.len() && near(dumps[next], end) {
                out.push((dumps[next], x.clone()));
                next += 1;
            }
        }
        Ok((x, out))
    }
}

/// Exact propagator for piecewise-constant coefficients.
pub fn propagate_piecewise_constant(ham: &FormLinearHamiltonian, s: f64, t: f64) -> Result<Propagator> {
    let steps = plan_piecewise_constant(ham, s, t)?;
    Stepper::new(ham).propagator(&steps, s, t)
}

/// Exponential-midpoint propagator with steps of at most `dt`.
pub fn propagate_smooth(ham: &FormLinearHamiltonian, s: f64, t: f64, dt: f64) -> Result<Propagator> {
    let steps = plan_midpoint(ham, s, t, dt)?;
    Stepper::new(ham).propagator(&steps, s, t)
}

/// States at `s + kΔ`, `k = 0..=count`, using midpoint steps of exactly `Δ`
/// (refined to respect breakpoints).
pub fn trajectory(ham: &FormLinearHamiltonian, psi: &CVec, s: f64, delta: f64, count: usize) -> Result<Vec<CVec>> {
    let mut out = vec![psi.clone()];
    let mut x = psi.clone();
    let mut stepper = Stepper::new(ham);
    for k in 0..count {
        let a = s + k as f64 * delta;
        let steps = plan_midpoint(ham, a, a + delta, delta)?;
        let (y, _) = stepper.state(&steps, &x, &[])?;
        x = y;
        out.push(x.clone());
    }
    Ok(out)
}

/// `max_{Φ,k} |d/dt(Φ†Mψ)(t_k) + iΦ†H(t_k)ψ_k| / ‖Φ‖₊` with a centered
/// difference over a uniformly sampled trajectory. Stencils straddling a
/// breakpoint of `H` are skipped: the equation holds between breaks only.
pub fn weak_residual(
    ham: &FormLinearHamiltonian,
    traj: &[CVec],
    s: f64,
    delta: f64,
    probes: &[CVec],
    scale: &HilbertScale,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let weights: Vec<(CVec, f64)> = probes
        .iter()
        .map(|phi| (ham.mass.dot(phi), scale.norm_plus(phi)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let breaks = ham.grid(s, s + delta * traj.len().saturating_sub(1) as f64);
    for k in 1..traj.len().saturating_sub(1) {
        let tk = s + k as f64 * delta;
        if breaks.iter().any(|&b| b > tk - delta + TIME_TOL && b < tk + delta - TIME_TOL) {
            continue;
        }
        let hpsi = ham.eval(tk)?.dot(&traj[k]);
        for ((mphi, w), phi) in weights.iter().zip(probes) {
            let dd = (inner(mphi.view(), traj[k + 1].view()) - inner(mphi.view(), traj[k - 1].view())) / (2.0 * delta);
            let r = (dd + I * inner(phi.view(), hpsi.view())).norm() / w;
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// Fidelity `|⟨a, b⟩_M| / (‖a‖‖b‖)`.
pub fn fidelity(a: &CVec, b: &CVec, mass: &CMat) -> f64 {
    let na = inner(a.view(), mass.dot(a).view()).re.sqrt();
    let nb = inner(b.view(), mass.dot(b).view()).re.sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (inner(a.view(), mass.dot(b).view()).norm() / (na * nb)).min(1.0)
}

/// `‖x‖ = √(x†Mx)`.
pub fn mass_norm(x: &CVec, mass: &CMat) -> f64 {
    inner(x.view(), mass.dot(x).view()).re.max(0.0).sqrt()
}

/// Unit-norm vector along `x`.
pub fn normalized(x: &CVec, mass: &CMat) -> CVec {
    let n = mass_norm(x, mass);
    x.mapv(|z| z / n)
}

/// Zero vector helper.
pub fn zeros(n: usize) -> CVec {
    Array1::zeros(n)
}
