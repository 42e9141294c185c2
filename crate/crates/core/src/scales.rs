//! Discrete Hilbert scale `H⁺ ⊂ H ⊂ H⁻` generated by `A₀ = H + (m + 1)M`.
//!
//! Everything goes through one generalized eigendecomposition `A₀W = MWΛ`
//! with `W†MW = I`. In the coordinates `c = W†Mx` the three norms are
//! `‖x‖₊² = Σλ|c|²`, `‖x‖² = Σ|c|²` and `‖x‖₋² = Σ|c|²/λ`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{adjoint, generalized_eig, hermitian_eig, hermitize, spectral_norm, CMat, CVec, C64};

#[derive(Debug, Clone)]
pub struct HilbertScale {
    /// Form kernel of `A₀`.
    pub a0: CMat,
    pub mass: CMat,
    /// Shift parameter `m`.
    pub m: f64,
    /// Eigenvalues of `(A₀, M)`, ascending and positive.
    pub lambda: Array1<f64>,
    /// `M`-orthonormal eigenvectors.
    pub w: CMat,
}

impl HilbertScale {
    /// Scale anchored at the Hamiltonian form `h` with shift `m`.
    pub fn new(h: &CMat, mass: &CMat, m: f64) -> Result<Self> {
        let a0 = hermitize(&(h + &mass.mapv(|z| z * (m + 1.0))));
        Self::from_reference(a0, mass.clone(), m)
    }

    /// Scale generated directly by a reference kernel `a0`.
    pub fn from_reference(a0: CMat, mass: CMat, m: f64) -> Result<Self> {
        let eig = generalized_eig(&a0, &mass)?;
        let lambda_min = eig.values.first().copied().unwrap_or(1.0);
        if lambda_min <= 0.0 {
            return Err(Error::NotPositive { lambda_min });
        }
        Ok(HilbertScale { a0, mass, m, lambda: eig.values, w: eig.vectors })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[0]
    }

    /// `c = W†Mx`.
    pub fn coords(&self, x: &CVec) -> CVec {
        adjoint(&self.w).dot(&self.mass.dot(x))
    }

    /// `x = Wc`.
    pub fn from_coords(&self, c: &CVec) -> CVec {
        self.w.dot(c)
    }

    pub fn norm(&self, x: &CVec) -> f64 {
        weighted(&self.coords(x), &self.lambda, 0.0)
    }

    pub fn norm_plus(&self, x: &CVec) -> f64 {
        weighted(&self.coords(x), &self.lambda, 1.0)
    }

    pub fn norm_minus(&self, x: &CVec) -> f64 {
        weighted(&self.coords(x), &self.lambda, -1.0)
    }

    /// `Λ^{p}·X·Λ^{p}` applied to a matrix given in eigen-coordinates.
    fn sandwich(&self, x: &CMat, p: f64) -> CMat {
        let s: Vec<f64> = self.lambda.iter().map(|l| l.powf(p)).collect();
        let mut out = x.clone();
        for ((i, j), z) in out.indexed_iter_mut() {
            *z *= s[i] * s[j];
        }
        out
    }

    /// Form kernel `T` in eigen-coordinates: `W†TW`.
    pub fn form_coords(&self, t: &CMat) -> CMat {
        adjoint(&self.w).dot(&t.dot(&self.w))
    }

    /// Operator `V` (acting on coefficient vectors) in eigen-coordinates:
    /// `W†MVW`.
    pub fn operator_coords(&self, v: &CMat) -> CMat {
        adjoint(&self.w).dot(&self.mass.dot(&v.dot(&self.w)))
    }

    /// `‖T‖₊,₋ = sup |x†Ty| / (‖x‖₊‖y‖₊)` for a form kernel `T`.
    pub fn opnorm_plus_minus(&self, t: &CMat) -> Result<f64> {
        norm_of(&self.sandwich(&self.form_coords(t), -0.5))
    }

    /// `‖V‖₊,₋ = sup ‖Vx‖₋ / ‖x‖₊` for an operator on coefficients.
    pub fn opnorm_plus_minus_operator(&self, v: &CMat) -> Result<f64> {
        norm_of(&self.sandwich(&self.operator_coords(v), -0.5))
    }

    /// `‖V‖₋,₊ = sup ‖Vx‖₊ / ‖x‖₋` for an operator on coefficients.
    pub fn opnorm_minus_plus(&self, v: &CMat) -> Result<f64> {
        norm_of(&self.sandwich(&self.operator_coords(v), 0.5))
    }

    /// Operator `A⁻¹ = (kernel)⁻¹M` for a positive form kernel, expressed on
    /// coefficients.
    pub fn inverse_operator(kernel: &CMat, mass: &CMat) -> Result<CMat> {
        let inv = crate::linalg::hpd_inverse(kernel)?;
        Ok(inv.dot(mass))
    }
}

fn weighted(c: &CVec, lambda: &Array1<f64>, p: f64) -> f64 {
    c.iter().zip(lambda.iter()).map(|(z, l)| z.norm_sqr() * l.powf(p)).sum::<f64>().sqrt()
}

/// Spectral norm, using the Hermitian eigenvalues when the input is Hermitian.
fn norm_of(a: &CMat) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let skew = a.indexed_iter().map(|((i, j), z)| (*z - a[[j, i]].conj()).norm()).fold(0.0, f64::max);
    if skew <= 1e-13 * scale {
        let e = hermitian_eig(&hermitize(a))?;
        let lo = e.values[0].abs();
        let hi = e.values[e.values.len() - 1].abs();
        Ok(lo.max(hi))
    } else {
        spectral_norm(a)
    }
}

/// Build the scale anchored at `h` with the given `m` (same as
/// [`HilbertScale::new`]).
pub fn make_scale(h: &CMat, mass: &CMat, m: f64) -> Result<HilbertScale> {
    HilbertScale::new(h, mass, m)
}

/// `c = max(√λ_max(A₁, A₂), √λ_max(A₂, A₁))`, the smallest constant with
/// `c⁻¹‖·‖₊,₂ ≤ ‖·‖₊,₁ ≤ c‖·‖₊,₂`.
pub fn scale_equivalence(s1: &HilbertScale, s2: &HilbertScale) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch(format!("scales of dimension {} and {}", s1.dim(), s2.dim())));
    }
    // pencil (A₁, A₂) whitened by s2
    let b = hermitize(&s2.sandwich(&s2.form_coords(&s1.a0), -0.5));
    let e = hermitian_eig(&b)?;
    let hi = e.values[e.values.len() - 1];
    let lo = e.values[0];
    if lo <= 0.0 {
        return Err(Error::NotPositive { lambda_min: lo });
    }
    Ok(hi.sqrt().max((1.0 / lo).sqrt()).max(1.0))
}

/// Diagonal matrix helper.
pub fn diag(values: &[f64]) -> CMat {
    let n = values.len();
    let mut out = Array2::zeros((n, n));
    for (i, v) in values.iter().enumerate() {
        out[[i, i]] = C64::new(*v, 0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, make_mesh, AssemblyOptions};
    use crate::boundary::{quasi_delta_unitary, QuasiDeltaParams};
    use crate::graph::presets;
    use crate::linalg::{eye, inner};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirichlet(h: f64) -> (CMat, CMat) {
        let g = presets::interval(1.0);
        let layout = g.boundary_index();
        let bc = quasi_delta_unitary(&layout, &QuasiDeltaParams::kirchhoff(&layout)).unwrap();
        let fm = assemble(&g, &make_mesh(&g, h), &bc, AssemblyOptions::default()).unwrap();
        let r = fm.reduced();
        (r.hamiltonian(0.0, 0.0), r.m)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        Array1::from_iter((0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
    }

    #[test]
    fn zero_hamiltonian_scales_the_norm() {
        let (_, m) = dirichlet(0.05);
        let n = m.nrows();
        let s = HilbertScale::new(&Array2::zeros((n, n)), &m, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(n, &mut rng);
        assert!((s.norm_plus(&x) - 2.0 * s.norm(&x)).abs() < 1e-12 * s.norm(&x));
    }

    #[test]
    fn eigenvectors_have_plus_norm_lambda_plus_one() {
        let (h, m) = dirichlet(0.02);
        let op = crate::assembly::ReducedOperator::new(h.clone(), m.clone()).unwrap();
        let s = HilbertScale::new(&h, &m, 0.0).unwrap();
        for n in 0..4 {
            let phi = op.eig.vectors.column(n).to_owned();
            let want = op.eig.values[n] + 1.0;
            assert!((s.norm_plus(&phi).powi(2) - want).abs() < 1e-9 * want);
            assert!((s.norm_minus(&phi).powi(2) - 1.0 / want).abs() < 1e-9);
        }
    }

    #[test]
    fn too_small_shift_is_rejected() {
        let (h, m) = dirichlet(0.05);
        let shifted = &h - &m.mapv(|z| z * 20.0);
        assert!(matches!(HilbertScale::new(&shifted, &m, 0.0), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn operator_norm_normalizations() {
        let (h, m) = dirichlet(0.05);
        let s = HilbertScale::new(&h, &m, 0.0).unwrap();
        assert!((s.opnorm_plus_minus(&s.a0).unwrap() - 1.0).abs() < 1e-10);
        let want = 1.0 / s.lambda_min();
        assert!((s.opnorm_plus_minus(&m).unwrap() - want).abs() < 1e-10 * want);
        let n = m.nrows();
        assert_eq!(s.opnorm_plus_minus(&Array2::zeros((n, n))).unwrap(), 0.0);
        let ainv = HilbertScale::inverse_operator(&s.a0, &m).unwrap();
        assert!((s.opnorm_minus_plus(&ainv).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(s.opnorm_minus_plus(&Array2::zeros((n, n))).unwrap(), 0.0);
        assert!((s.opnorm_plus_minus_operator(&eye(n)).unwrap() - want).abs() < 1e-10 * want);
    }

    #[test]
    fn duality_and_cauchy_schwarz() {
        let (h, m) = dirichlet(0.05);
        let s = HilbertScale::new(&h, &m, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = random_vec(m.nrows(), &mut rng);
            let y = random_vec(m.nrows(), &mut rng);
            let pairing = inner(x.view(), m.dot(&y).view()).norm();
            assert!(pairing <= s.norm_minus(&x) * s.norm_plus(&y) * (1.0 + 1e-12));
            assert!(s.norm(&x).powi(2) <= s.norm_plus(&x) * s.norm_minus(&x) * (1.0 + 1e-12));
            assert!(s.norm(&x) <= s.norm_plus(&x) * (1.0 + 1e-12));
        }
        let phi = s.w.column(2).to_owned();
        let eq = s.norm_plus(&phi) * s.norm_minus(&phi) - s.norm(&phi).powi(2);
        assert!(eq.abs() < 1e-10);
    }

    #[test]
    fn equivalence_constant_examples() {
        let (h, m) = dirichlet(0.05);
        let s1 = HilbertScale::new(&h, &m, 0.0).unwrap();
        assert!((scale_equivalence(&s1, &s1).unwrap() - 1.0).abs() < 1e-10);
        let s4 = HilbertScale::from_reference(s1.a0.mapv(|z| z * 4.0), m.clone(), 0.0).unwrap();
        assert!((scale_equivalence(&s1, &s4).unwrap() - 2.0).abs() < 1e-10);
        assert!((scale_equivalence(&s4, &s1).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn plus_constant_transfers_to_minus_norms() {
        let (h, m) = dirichlet(0.05);
        let n = m.nrows();
        let s1 = HilbertScale::new(&h, &m, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Array2::from_shape_fn((n, n), |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let s2 = HilbertScale::new(&(&h + &adjoint(&b).dot(&b)), &m, 0.0).unwrap();
        let cst = scale_equivalence(&s1, &s2).unwrap();
        for _ in 0..100 {
            let x = random_vec(n, &mut rng);
            let rp = s1.norm_plus(&x) / s2.norm_plus(&x);
            let rm = s1.norm_minus(&x) / s2.norm_minus(&x);
            for r in [rp, rm] {
                assert!(r <= cst * (1.0 + 1e-10) && r >= (1.0 - 1e-10) / cst, "{r} vs {cst}");
            }
        }
    }
}
