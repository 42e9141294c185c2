//! Quasi-δ vertex conditions: boundary unitaries, the projector onto their
//! `-1` eigenspace and the partial Cayley transform.
//!
//! All matrices act on the boundary space `ℂ^{2|E|}`, one coordinate per edge
//! endpoint, in [`BoundaryLayout`] point order. A quasi-δ junction block is
//! `(e^{iδ} + 1) P⊥ − I` with the rank-one projector
//! `P⊥_{ee'} = e^{i(χ_e − χ_e')} / k`; the exterior block is `−I`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{BoundaryLayout, MetricGraph, Owner};
use crate::linalg::{adjoint, c, conjugate_by_diagonal, eye, fro_norm, hermitize, normal_eig, CMat, C64};

/// Eigenvalues within this angle of `-1` are treated as exactly `-1`.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Default minimum angular gap between `-1` and the rest of the spectrum.
pub const GAP_THRESHOLD: f64 = 1e-6;
/// Admissible strengths satisfy `|δ| <= π - DELTA_MARGIN`.
pub const DELTA_MARGIN: f64 = 1e-3;

/// Strength `δ_v` per junction and phase `χ_{v,e}` per boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiDeltaParams {
    delta: Vec<f64>,
    chi: Vec<f64>,
}

impl QuasiDeltaParams {
    /// `delta[j]` belongs to junction `j`; `chi[p]` to boundary point `p`.
    /// Phases on exterior points must be zero. Phases are reduced to `[0, 2π)`.
    pub fn new(layout: &BoundaryLayout, delta: Vec<f64>, chi: Vec<f64>) -> Result<Self> {
        if delta.len() != layout.blocks.len() {
            return Err(Error::ParamMismatch(format!(
                "{} strengths for {} junctions",
                delta.len(),
                layout.blocks.len()
            )));
        }
        if chi.len() != layout.len() {
            return Err(Error::ParamMismatch(format!(
                "{} phases for {} boundary points",
                chi.len(),
                layout.len()
            )));
        }
        for (j, &d) in delta.iter().enumerate() {
            if !d.is_finite() || d.abs() > PI - DELTA_MARGIN {
                return Err(Error::DeltaOutOfRange {
                    vertex: format!("#{j}"),
                    delta: d,
                    margin: DELTA_MARGIN,
                });
            }
        }
        for &p in &layout.exterior {
            if chi[p] != 0.0 {
                return Err(Error::ParamMismatch(format!("exterior point {p} carries a phase")));
            }
        }
        if chi.iter().any(|x| !x.is_finite()) {
            return Err(Error::ParamMismatch("non-finite phase".into()));
        }
        let chi = chi.into_iter().map(|x| x.rem_euclid(2.0 * PI)).collect();
        Ok(QuasiDeltaParams { delta, chi })
    }

    /// `δ = 0`, `χ = 0` everywhere.
    pub fn kirchhoff(layout: &BoundaryLayout) -> Self {
        QuasiDeltaParams { delta: vec![0.0; layout.blocks.len()], chi: vec![0.0; layout.len()] }
    }

    /// Builds parameters from named maps: `delta` keyed by vertex id, `chi` keyed
    /// by `vertex/edge/endpoint`. Missing entries default to zero; unknown keys
    /// are rejected.
    pub fn from_named(
        graph: &MetricGraph,
        layout: &BoundaryLayout,
        delta: &BTreeMap<String, f64>,
        chi: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let mut d = vec![0.0; layout.blocks.len()];
        for (name, value) in delta {
            let v = graph.vertex_by_id(name).ok_or_else(|| Error::UnknownVertex(name.clone()))?;
            let j = layout
                .blocks
                .iter()
                .position(|b| b.vertex == v)
                .ok_or_else(|| Error::ParamMismatch(format!("vertex {name} has no junction")))?;
            d[j] = *value;
        }
        let mut x = vec![0.0; layout.len()];
        let keys: Vec<String> = (0..layout.len()).map(|p| layout.point_key(graph, p)).collect();
        for (name, value) in chi {
            let p = keys
                .iter()
                .position(|k| k == name)
                .ok_or_else(|| Error::ParamMismatch(format!("unknown boundary point {name}")))?;
            x[p] = *value;
        }
        Self::new(layout, d, x).map_err(|e| match e {
            Error::DeltaOutOfRange { vertex, delta, margin } => {
                let j: usize = vertex.trim_start_matches('#').parse().unwrap_or(0);
                Error::DeltaOutOfRange {
                    vertex: graph.vertices()[layout.blocks[j].vertex].clone(),
                    delta,
                    margin,
                }
            }
            other => other,
        })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    /// Same strengths, phases replaced.
    pub fn with_chi(&self, layout: &BoundaryLayout, chi: Vec<f64>) -> Result<Self> {
        Self::new(layout, self.delta.clone(), chi)
    }
}

/// A boundary unitary with its spectral data at `-1`.
#[derive(Debug, Clone)]
pub struct BoundaryUnitary {
    pub u: CMat,
    /// Orthogonal projector onto `ker(U + 1)`.
    pub p: CMat,
    /// Partial Cayley transform `i P⊥ (U − I)(U + I)⁻¹`.
    pub c: CMat,
    /// Angular distance from `-1` to the rest of the spectrum; `∞` if empty.
    pub gap: f64,
}

impl BoundaryUnitary {
    /// Spectral analysis of an arbitrary unitary boundary matrix.
    pub fn from_unitary(u: CMat) -> Result<Self> {
        Self::from_unitary_with_threshold(u, GAP_THRESHOLD)
    }

    pub fn from_unitary_with_threshold(u: CMat, threshold: f64) -> Result<Self> {
        let n = u.nrows();
        if u.ncols() != n {
            return Err(Error::ParamMismatch("boundary matrix is not square".into()));
        }
        let defect = fro_norm(&(adjoint(&u).dot(&u) - eye(n)));
        if defect > 1e-9 * (n.max(1) as f64) {
            return Err(Error::ParamMismatch(format!("matrix is not unitary (defect {defect:e})")));
        }
        let (p, gap, spectrum) = eigenprojector_minus_one(&u)?;
        if gap < threshold {
            return Err(Error::NoGap { gap, threshold });
        }
        let c = cayley_from_spectrum(&spectrum, n);
        Ok(BoundaryUnitary { u, p, c, gap })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `P⊥ = I − P`.
    pub fn p_perp(&self) -> CMat {
        eye(self.dim()) - &self.p
    }

    /// Conjugation by `e^{iθ}`: returns `e^{iθ} U e^{−iθ}` together with the
    /// conjugated projector and Cayley transform. The gap is unchanged.
    pub fn gauge_conjugate(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.dim() {
            return Err(Error::ParamMismatch(format!(
                "{} gauge phases for {} boundary points",
                theta.len(),
                self.dim()
            )));
        }
        let d: Vec<C64> = theta.iter().map(|&t| C64::from_polar(1.0, t)).collect();
        Ok(BoundaryUnitary {
            u: conjugate_by_diagonal(&self.u, &d),
            p: hermitize(&conjugate_by_diagonal(&self.p, &d)),
            c: hermitize(&conjugate_by_diagonal(&self.c, &d)),
            gap: self.gap,
        })
    }
}

/// Eigenpairs of a unitary with their angular distance to `-1`.
struct UnitarySpectrum {
    pairs: Vec<(f64, ndarray::Array1<C64>)>,
}

/// Projector onto the `-1` eigenspace and the gap of the remaining spectrum.
fn eigenprojector_minus_one(u: &CMat) -> Result<(CMat, f64, UnitarySpectrum)> {
    let n = u.nrows();
    let (values, vectors) = normal_eig(u)?;
    let mut p = Array2::<C64>::zeros((n, n));
    let mut gap = f64::INFINITY;
    let mut pairs = Vec::new();
    for (k, lambda) in values.iter().enumerate() {
        let angle = lambda.arg();
        let dist = PI - angle.abs();
        let w = vectors.column(k).to_owned();
        if dist < CLUSTER_TOL {
            for i in 0..n {
                for j in 0..n {
                    p[[i, j]] += w[i] * w[j].conj();
                }
            }
        } else {
            gap = gap.min(dist);
            pairs.push((angle, w));
        }
    }
    Ok((hermitize(&p), gap, UnitarySpectrum { pairs }))
}

/// `Σ −tan(θ/2) w w†` over eigenpairs away from `-1`.
fn cayley_from_spectrum(spectrum: &UnitarySpectrum, n: usize) -> CMat {
    let mut out = Array2::<C64>::zeros((n, n));
    for (angle, w) in &spectrum.pairs {
        let s = -(angle / 2.0).tan();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += w[i] * w[j].conj() * s;
            }
        }
    }
    hermitize(&out)
}

/// Projector and gap of a unitary, see [`BoundaryUnitary`].
pub fn minus_one_projector(u: &CMat) -> Result<(CMat, f64)> {
    let (p, gap, _) = eigenprojector_minus_one(u)?;
    Ok((p, gap))
}

/// Partial Cayley transform via the spectral resolution of `u`.
pub fn partial_cayley(u: &CMat) -> Result<CMat> {
    let (_, gap, spectrum) = eigenprojector_minus_one(u)?;
    if gap < GAP_THRESHOLD {
        return Err(Error::NoGap { gap, threshold: GAP_THRESHOLD });
    }
    Ok(cayley_from_spectrum(&spectrum, u.nrows()))
}

/// `P⊥` assembled block by block from its closed form.
pub fn quasi_delta_projector_perp(layout: &BoundaryLayout, params: &QuasiDeltaParams) -> CMat {
    let n = layout.len();
    let mut out = Array2::<C64>::zeros((n, n));
    for j in 0..layout.blocks.len() {
        let pts = layout.junction_points(j);
        let k = pts.len() as f64;
        for &a in pts {
            for &b in pts {
                out[[a, b]] = C64::from_polar(1.0 / k, params.chi[a] - params.chi[b]);
            }
        }
    }
    out
}

/// Closed-form quasi-δ unitary `U_D ⊕ ⊕_v ((e^{iδ_v} + 1) P⊥_v − I)`.
pub fn quasi_delta_matrix(layout: &BoundaryLayout, params: &QuasiDeltaParams) -> CMat {
    let n = layout.len();
    let pp = quasi_delta_projector_perp(layout, params);
    let mut u = -eye(n);
    for (j, _) in layout.blocks.iter().enumerate() {
        let factor = C64::from_polar(1.0, params.delta[j]) + 1.0;
        for &a in layout.junction_points(j) {
            for &b in layout.junction_points(j) {
                u[[a, b]] += factor * pp[[a, b]];
            }
        }
    }
    u
}

/// Closed-form partial Cayley transform `⊕_v −tan(δ_v/2) P⊥_v`, zero on the
/// exterior block.
pub fn quasi_delta_cayley(layout: &BoundaryLayout, params: &QuasiDeltaParams) -> CMat {
    let mut out = quasi_delta_projector_perp(layout, params);
    for (p, point) in layout.points.iter().enumerate() {
        if let Owner::Junction(j) = point.owner {
            let s = -(params.delta[j] / 2.0).tan();
            out.row_mut(p).mapv_inplace(|z| z * s);
        }
    }
    out
}

/// The quasi-δ boundary unitary with spectrally computed projector and Cayley
/// transform.
pub fn quasi_delta_unitary(layout: &BoundaryLayout, params: &QuasiDeltaParams) -> Result<BoundaryUnitary> {
    if params.delta.len() != layout.blocks.len() || params.chi.len() != layout.len() {
        return Err(Error::ParamMismatch("parameters built for another layout".into()));
    }
    BoundaryUnitary::from_unitary(quasi_delta_matrix(layout, params))
}

/// `max_v |tan(δ_v / 2)|`, the spectral norm of the quasi-δ Cayley transform.
pub fn cayley_norm_bound(params: &QuasiDeltaParams) -> f64 {
    params.delta.iter().map(|d| (d / 2.0).tan().abs()).fold(0.0, f64::max)
}

/// Identity unitary helper for tests: all points Neumann-like.
pub fn identity_unitary(n: usize) -> CMat {
    eye(n).mapv(|z| z * c(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::presets;
    use crate::linalg::spectral_norm;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn dead_end_block_is_robin() {
        let g = presets::lasso();
        let layout = g.boundary_index();
        let params = QuasiDeltaParams::new(&layout, vec![0.7, 0.0], vec![0.0; 4]).unwrap();
        let u = quasi_delta_matrix(&layout, &params);
        assert!((u[[0, 0]] - C64::from_polar(1.0, 0.7)).norm() < 1e-15);
        let params = QuasiDeltaParams::new(&layout, vec![0.0, 0.0], vec![0.0; 4]).unwrap();
        let u = quasi_delta_matrix(&layout, &params);
        assert!((u[[0, 0]] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn kirchhoff_pair_is_swap() {
        let g = presets::glued_pair(1.0, 1.0);
        let layout = g.boundary_index();
        let params = QuasiDeltaParams::kirchhoff(&layout);
        let u = quasi_delta_matrix(&layout, &params);
        // points: e1 tail (ext), e1 head (m), e2 tail (m), e2 head (ext)
        let block = array![[u[[1, 1]], u[[1, 2]]], [u[[2, 1]], u[[2, 2]]]];
        let swap = array![[c(0.0), c(1.0)], [c(1.0), c(0.0)]];
        assert!(fro_norm(&(block - swap)) < 1e-15);
        let bu = quasi_delta_unitary(&layout, &params).unwrap();
        assert!((bu.gap - PI).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_interval_is_minus_identity() {
        let layout = presets::interval(1.0).boundary_index();
        let bu = quasi_delta_unitary(&layout, &QuasiDeltaParams::kirchhoff(&layout)).unwrap();
        assert!(fro_norm(&(&bu.u + &eye(2))) < 1e-15);
        assert!(fro_norm(&(&bu.p - &eye(2))) < 1e-12);
        assert!(bu.gap.is_infinite());
        assert!(fro_norm(&bu.c) < 1e-14);
    }

    #[test]
    fn identity_has_empty_projector() {
        let bu = BoundaryUnitary::from_unitary(identity_unitary(3)).unwrap();
        assert!(fro_norm(&bu.p) < 1e-14);
        assert!((bu.gap - PI).abs() < 1e-14);
    }

    #[test]
    fn quasi_delta_block_rank_and_gap() {
        let g = presets::lasso();
        let layout = g.boundary_index();
        let delta = -1.1;
        let params = QuasiDeltaParams::new(&layout, vec![0.4, delta], vec![0.0, 0.3, 1.2, 2.5]).unwrap();
        let bu = quasi_delta_unitary(&layout, &params).unwrap();
        let rank: f64 = (0..4).map(|i| bu.p[[i, i]].re).sum();
        // dead end block has rank 0, three-point block has rank 2
        assert!((rank - 2.0).abs() < 1e-12);
        assert!((bu.gap - (PI - 1.1)).abs() < 1e-10);
    }

    #[test]
    fn cayley_pair_at_quarter_turn() {
        let g = presets::glued_pair(1.0, 1.0);
        let layout = g.boundary_index();
        let (x1, x2) = (0.4, 1.9);
        let params = QuasiDeltaParams::new(&layout, vec![PI / 2.0], vec![0.0, x1, x2, 0.0]).unwrap();
        let cm = partial_cayley(&quasi_delta_matrix(&layout, &params)).unwrap();
        assert!((cm[[1, 1]] - c(-0.5)).norm() < 1e-12);
        assert!((cm[[2, 2]] - c(-0.5)).norm() < 1e-12);
        assert!((cm[[1, 2]] - C64::from_polar(-0.5, x1 - x2)).norm() < 1e-12);
    }

    #[test]
    fn kirchhoff_has_no_cayley_term() {
        let layout = presets::lasso().boundary_index();
        let bu = quasi_delta_unitary(&layout, &QuasiDeltaParams::kirchhoff(&layout)).unwrap();
        assert!(fro_norm(&bu.c) < 1e-14);
    }

    #[test]
    fn gauge_removes_phases() {
        let layout = presets::lasso().boundary_index();
        let chi = vec![0.3, 1.0, 2.0, 5.5];
        let params = QuasiDeltaParams::new(&layout, vec![0.2, -0.9], chi.clone()).unwrap();
        let bu = quasi_delta_unitary(&layout, &params).unwrap();
        let theta: Vec<f64> = chi.iter().map(|x| -x).collect();
        let gauged = bu.gauge_conjugate(&theta).unwrap();
        let plain = QuasiDeltaParams::new(&layout, vec![0.2, -0.9], vec![0.0; 4]).unwrap();
        let reference = quasi_delta_unitary(&layout, &plain).unwrap();
        assert!(fro_norm(&(&gauged.u - &reference.u)) < 1e-13);
        assert!(fro_norm(&(&gauged.c - &reference.c)) < 1e-12);
        assert_eq!(gauged.gap, bu.gap);
    }

    #[test]
    fn constant_gauge_is_trivial() {
        let layout = presets::lasso().boundary_index();
        let params = QuasiDeltaParams::new(&layout, vec![0.2, -0.9], vec![0.3, 1.0, 2.0, 5.5]).unwrap();
        let bu = quasi_delta_unitary(&layout, &params).unwrap();
        let same = bu.gauge_conjugate(&[0.0; 4]).unwrap();
        assert!(fro_norm(&(&same.u - &bu.u)) == 0.0);
        let shifted = bu.gauge_conjugate(&[1.7; 4]).unwrap();
        assert!(fro_norm(&(&shifted.u - &bu.u)) < 1e-14);
    }

    #[test]
    fn delta_near_pi_rejected() {
        let layout = presets::robin_interval(1.0).boundary_index();
        let r = QuasiDeltaParams::new(&layout, vec![PI - 1e-4], vec![0.0, 0.0]);
        assert!(matches!(r, Err(Error::DeltaOutOfRange { .. })));
    }

    #[test]
    fn mismatched_params_rejected() {
        let layout = presets::lasso().boundary_index();
        assert!(matches!(
            QuasiDeltaParams::new(&layout, vec![0.0], vec![0.0; 4]),
            Err(Error::ParamMismatch(_))
        ));
    }

    fn star_layout(k: usize) -> BoundaryLayout {
        use crate::graph::{EdgeDocument, Endpoint, GraphDocument};
        let mut vertices = vec!["c".to_string()];
        let mut edges = Vec::new();
        let mut center = Vec::new();
        let mut junctions = std::collections::BTreeMap::new();
        for i in 0..k {
            vertices.push(format!("o{i}"));
            edges.push(EdgeDocument {
                id: format!("e{i}"),
                from: "c".into(),
                to: format!("o{i}"),
                length: 1.0,
                mesh: None,
            });
            center.push((format!("e{i}"), Endpoint::Tail));
            junctions.insert(format!("o{i}"), vec![(format!("e{i}"), Endpoint::Head)]);
        }
        junctions.insert("c".to_string(), center);
        let doc = GraphDocument { vertices, edges, junctions, exterior: vec![] };
        MetricGraph::build(&doc).unwrap().boundary_index()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn spectral_cayley_matches_closed_form(
            k in 1usize..=6,
            deltas in proptest::collection::vec(-PI + 0.01..PI - 0.01, 7),
            chis in proptest::collection::vec(0.0..2.0 * PI, 12),
        ) {
            let layout = star_layout(k);
            let nj = layout.blocks.len();
            let params = QuasiDeltaParams::new(&layout, deltas[..nj].to_vec(), chis[..layout.len()].to_vec()).unwrap();
            let bu = quasi_delta_unitary(&layout, &params).unwrap();
            let closed = quasi_delta_cayley(&layout, &params);
            let n = layout.len();
            prop_assert!(fro_norm(&(adjoint(&bu.u).dot(&bu.u) - eye(n))) < 1e-12);
            prop_assert!(fro_norm(&(&bu.c - &adjoint(&bu.c))) < 1e-12);
            prop_assert!(fro_norm(&bu.c.dot(&bu.p)) < 1e-12 * (1.0 + cayley_norm_bound(&params)));
            prop_assert!(fro_norm(&(bu.p.dot(&bu.u) + &bu.p)) < 1e-12);
            let scale = 1.0 + cayley_norm_bound(&params);
            let dev = (&bu.c - &closed).iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(dev < 1e-12 * scale, "deviation {dev}");
            let norm = spectral_norm(&bu.c).unwrap();
            prop_assert!((norm - cayley_norm_bound(&params)).abs() < 1e-10 * scale);
        }
    }
}
