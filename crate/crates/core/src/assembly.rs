//! P1 finite elements for the form `‖(d + iuA₀)Φ‖² − ⟨φ, Cφ⟩ + v⟨Φ, Θ₀Φ⟩`.
//!
//! Every edge carries its own nodes, junction nodes included, so continuity
//! across a vertex is not built into the mesh. It enters only through the
//! constraint `Pφ = 0` on boundary traces, which is imposed by restricting to
//! the column space of a [`Reduction`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::boundary::BoundaryUnitary;
use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{adjoint, c, fro_norm, generalized_eig, hermitian_eig, hermitize, lowest_generalized_eig, CMat, CVec, GeneralizedEig, C64, I};
use crate::quadrature::{gauss_legendre_unit, Poly};

/// Gauss points per element for profile-weighted terms.
const PROFILE_QUADRATURE: usize = 6;
/// Minimum number of elements per edge.
pub const MIN_ELEMENTS: usize = 4;
/// Largest reduced dimension accepted by the dense solvers.
pub const MAX_DOFS: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMesh {
    /// Global index of the tail node.
    pub offset: usize,
    pub elements: usize,
    pub h: f64,
    pub length: f64,
}

/// Uniform mesh on every edge with distinct endpoint nodes per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub edges: Vec<EdgeMesh>,
    pub nodes: usize,
}

impl Mesh {
    /// Node carrying the trace at boundary point `p`.
    pub fn boundary_node(&self, p: usize) -> usize {
        let e = &self.edges[p / 2];
        e.offset + (p % 2) * e.elements
    }

    /// `(edge, x)` of a global node.
    pub fn position(&self, node: usize) -> (usize, f64) {
        for (k, e) in self.edges.iter().enumerate() {
            if node <= e.offset + e.elements {
                return (k, (node - e.offset) as f64 * e.h);
            }
        }
        panic!("node {node} outside the mesh");
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (k, _) = self.position(node);
        let e = &self.edges[k];
        node == e.offset || node == e.offset + e.elements
    }
}

/// Builds a uniform mesh with `h_e <= min(h, hint_e)` and at least
/// [`MIN_ELEMENTS`] elements per edge.
pub fn make_mesh(graph: &MetricGraph, h: f64) -> Mesh {
    assert!(h > 0.0, "mesh size must be positive");
    let mut offset = 0;
    let mut edges = Vec::with_capacity(graph.edges().len());
    for edge in graph.edges() {
        let target = edge.mesh_hint.map_or(h, |hint| hint.min(h));
        let n = ((edge.length / target) * (1.0 - 1e-12)).ceil().max(MIN_ELEMENTS as f64) as usize;
        edges.push(EdgeMesh { offset, elements: n, h: edge.length / n as f64, length: edge.length });
        offset += n + 1;
    }
    Mesh { edges, nodes: offset }
}

/// Real function on the graph given by one polynomial per edge in the local
/// coordinate `x ∈ [0, ℓ_e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub edges: Vec<Poly>,
}

impl Profile {
    pub fn zero(edges: usize) -> Self {
        Profile { edges: vec![Poly::zero(); edges] }
    }

    pub fn derivative(&self) -> Profile {
        Profile { edges: self.edges.iter().map(Poly::derivative).collect() }
    }

    pub fn eval(&self, edge: usize, x: f64) -> f64 {
        self.edges[edge].eval(x)
    }

    /// Values at every mesh node.
    pub fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.nodes];
        for (k, e) in mesh.edges.iter().enumerate() {
            for i in 0..=e.elements {
                out[e.offset + i] = self.edges[k].eval(i as f64 * e.h);
            }
        }
        out
    }

    /// Values at the boundary points of the layout order.
    pub fn traces(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.edges
            .iter()
            .enumerate()
            .flat_map(|(k, e)| [self.edges[k].eval(0.0), self.edges[k].eval(e.length)])
            .collect()
    }
}

/// Square sparse matrix stored as an ordered map of nonzeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMat {
    pub n: usize,
    pub entries: BTreeMap<(usize, usize), C64>,
}

impl SparseMat {
    pub fn new(n: usize) -> Self {
        SparseMat { n, entries: BTreeMap::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, z: C64) {
        *self.entries.entry((i, j)).or_insert(C64::new(0.0, 0.0)) += z;
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = Array2::zeros((self.n, self.n));
        for (&(i, j), &z) in &self.entries {
            out[[i, j]] += z;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|z| *z == C64::new(0.0, 0.0))
    }
}

/// Sparse isometry from reduced coordinates into nodal coefficients whose
/// range is `{x : P·trace(x) = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    /// For every full index, the nonzeros `(reduced column, value)` of its row.
    rows: Vec<Vec<(usize, C64)>>,
    dim: usize,
}

impl Reduction {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn full_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn lift(&self, x: &CVec) -> CVec {
        Array1::from_iter(self.rows.iter().map(|row| row.iter().map(|&(a, r)| r * x[a]).sum()))
    }

    /// `R† y`.
    pub fn restrict(&self, y: &CVec) -> CVec {
        let mut out = Array1::zeros(self.dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(a, r) in row {
                out[a] += r.conj() * y[i];
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = Array2::zeros((self.rows.len(), self.dim));
        for (i, row) in self.rows.iter().enumerate() {
            for &(a, r) in row {
                out[[i, a]] = r;
            }
        }
        out
    }

    /// Dense `R† A R`.
    pub fn project(&self, a: &SparseMat) -> CMat {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (&(i, j), &z) in &a.entries {
            for &(p, ri) in &self.rows[i] {
                let left = ri.conj() * z;
                for &(q, rj) in &self.rows[j] {
                    out[[p, q]] += left * rj;
                }
            }
        }
        out
    }
}

/// Builds the reduction for projector `p` on boundary points: identity on
/// interior nodes, followed by an orthonormal basis of `ker P` on each coupled
/// group of boundary nodes.
pub fn constraint_reduction(mesh: &Mesh, p: &CMat) -> Result<Reduction> {
    let nb = p.nrows();
    if nb != 2 * mesh.edges.len() {
        return Err(Error::MeshBcMismatch(format!(
            "projector has dimension {nb}, mesh has {} boundary nodes",
            2 * mesh.edges.len()
        )));
    }
    let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); mesh.nodes];
    let mut dim = 0;
    let boundary: Vec<usize> = (0..nb).map(|q| mesh.boundary_node(q)).collect();
    for node in 0..mesh.nodes {
        if !boundary.contains(&node) {
            rows[node].push((dim, c(1.0)));
            dim += 1;
        }
    }
    for group in coupled_groups(p) {
        let k = group.len();
        let mut block = Array2::zeros((k, k));
        for (a, &pa) in group.iter().enumerate() {
            for (b, &pb) in group.iter().enumerate() {
                block[[a, b]] = p[[pa, pb]];
            }
        }
        let eig = hermitian_eig(&hermitize(&block))?;
        for (j, &lambda) in eig.values.iter().enumerate() {
            if lambda.abs() > 1e-8 && (lambda - 1.0).abs() > 1e-8 {
                return Err(Error::MeshBcMismatch(format!("boundary matrix is not a projector (eigenvalue {lambda})")));
            }
            if lambda.abs() <= 1e-8 {
                for (a, &pa) in group.iter().enumerate() {
                    let z = eig.vectors[[a, j]];
                    if z.norm() > 1e-15 {
                        rows[boundary[pa]].push((dim, z));
                    }
                }
                dim += 1;
            }
        }
    }
    Ok(Reduction { rows, dim })
}

/// Connected components of the sparsity graph of `p`, in order of first index.
fn coupled_groups(p: &CMat) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if p[[i, j]].norm() > 1e-13 || p[[j, i]].norm() > 1e-13 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Optional ingredients of [`assemble`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions<'a> {
    /// Magnetic profile `A₀` for the `S₁`, `S₂` blocks.
    pub magnetic: Option<&'a Profile>,
    /// Scalar profile `Θ₀` for the potential block.
    pub potential: Option<&'a Profile>,
    /// Gauge frame: use the basis `e^{isΘ}φ_i` for the given `(Θ, s)`. The
    /// stiffness and mass blocks are then integrated in that basis and the
    /// boundary data are expressed in frame coordinates.
    pub frame: Option<(&'a Profile, f64)>,
}

/// Sparse form matrices on nodal coefficients plus the constraint reduction.
#[derive(Debug, Clone)]
pub struct FormMatrices {
    pub mesh: Mesh,
    pub m: SparseMat,
    pub k: SparseMat,
    pub s1: SparseMat,
    pub s2: SparseMat,
    pub v: SparseMat,
    pub b: SparseMat,
    /// Projector on boundary traces, in the coordinates the matrices use.
    pub p: CMat,
    pub reduction: Reduction,
}

/// Assembles the form blocks for boundary data `bc`.
pub fn assemble(graph: &MetricGraph, mesh: &Mesh, bc: &BoundaryUnitary, opts: AssemblyOptions) -> Result<FormMatrices> {
    let ne = graph.edges().len();
    if mesh.edges.len() != ne {
        return Err(Error::MeshBcMismatch(format!("mesh has {} edges, graph has {ne}", mesh.edges.len())));
    }
    if bc.dim() != 2 * ne {
        return Err(Error::MeshBcMismatch(format!("boundary data of dimension {} for {} endpoints", bc.dim(), 2 * ne)));
    }
    for (k, (me, ge)) in mesh.edges.iter().zip(graph.edges()).enumerate() {
        if (me.length - ge.length).abs() > 1e-12 * ge.length {
            return Err(Error::MeshBcMismatch(format!("edge {k} length differs between mesh and graph")));
        }
    }
    for (name, prof) in [("magnetic", opts.magnetic), ("potential", opts.potential), ("frame", opts.frame.map(|f| f.0))] {
        if let Some(prof) = prof {
            if prof.edges.len() != ne {
                return Err(Error::MeshBcMismatch(format!("{name} profile has {} edges", prof.edges.len())));
            }
        }
    }

    let n = mesh.nodes;
    let mut m = SparseMat::new(n);
    let mut k = SparseMat::new(n);
    let mut s1 = SparseMat::new(n);
    let mut s2 = SparseMat::new(n);
    let mut v = SparseMat::new(n);
    let (gx, gw) = gauss_legendre_unit(PROFILE_QUADRATURE);
    let frame_derivative = opts.frame.map(|(theta, s)| (theta.derivative(), s));

    for (e, em) in mesh.edges.iter().enumerate() {
        let h = em.h;
        for el in 0..em.elements {
            let nodes = [em.offset + el, em.offset + el + 1];
            let x0 = el as f64 * h;
            let mut me = [[C64::new(0.0, 0.0); 2]; 2];
            let mut ke = me;
            let mut s1e = me;
            let mut s2e = me;
            let mut ve = me;
            for (&xi, &wi) in gx.iter().zip(&gw) {
                let x = x0 + xi * h;
                let w = wi * h;
                let phi = [1.0 - xi, xi];
                let dphi = [-1.0 / h, 1.0 / h];
                if let (Some((theta, s)), Some((dtheta, _))) = (opts.frame, frame_derivative.as_ref()) {
                    let g = C64::from_polar(1.0, s * theta.eval(e, x));
                    let dg = g * I * (s * dtheta.eval(e, x));
                    let b = [g * phi[0], g * phi[1]];
                    let db = [g * dphi[0] + dg * phi[0], g * dphi[1] + dg * phi[1]];
                    for a in 0..2 {
                        for bb in 0..2 {
                            me[a][bb] += b[a].conj() * b[bb] * w;
                            ke[a][bb] += db[a].conj() * db[bb] * w;
                        }
                    }
                } else {
                    for a in 0..2 {
                        for bb in 0..2 {
                            me[a][bb] += c(phi[a] * phi[bb] * w);
                            ke[a][bb] += c(dphi[a] * dphi[bb] * w);
                        }
                    }
                }
                if let Some(a0) = opts.magnetic {
                    let av = a0.eval(e, x);
                    for a in 0..2 {
                        for bb in 0..2 {
                            s1e[a][bb] += I * (av * (dphi[a] * phi[bb] - phi[a] * dphi[bb]) * w);
                            s2e[a][bb] += c(av * av * phi[a] * phi[bb] * w);
                        }
                    }
                }
                if let Some(th) = opts.potential {
                    let tv = th.eval(e, x);
                    let g2 = match opts.frame {
                        Some((theta, s)) => {
                            let g = C64::from_polar(1.0, s * theta.eval(e, x));
                            g.conj() * g
                        }
                        None => c(1.0),
                    };
                    for a in 0..2 {
                        for bb in 0..2 {
                            ve[a][bb] += g2 * (tv * phi[a] * phi[bb] * w);
                        }
                    }
                }
            }
            for a in 0..2 {
                for bb in 0..2 {
                    let (i, j) = (nodes[a], nodes[bb]);
                    m.add(i, j, me[a][bb]);
                    k.add(i, j, ke[a][bb]);
                    if opts.magnetic.is_some() {
                        s1.add(i, j, s1e[a][bb]);
                        s2.add(i, j, s2e[a][bb]);
                    }
                    if opts.potential.is_some() {
                        v.add(i, j, ve[a][bb]);
                    }
                }
            }
        }
    }

    // Boundary data in coefficient coordinates: traces of frame basis
    // functions carry the factor e^{isθ_p}.
    let coeff_bc = match opts.frame {
        Some((theta, s)) => {
            let traces: Vec<f64> = theta.traces(mesh).iter().map(|t| -s * t).collect();
            bc.gauge_conjugate(&traces)?
        }
        None => bc.clone(),
    };
    let nb = 2 * ne;
    let mut b = SparseMat::new(n);
    for p in 0..nb {
        for q in 0..nb {
            let z = coeff_bc.c[[p, q]];
            if z != C64::new(0.0, 0.0) {
                b.add(mesh.boundary_node(p), mesh.boundary_node(q), -z);
            }
        }
    }
    let reduction = constraint_reduction(mesh, &coeff_bc.p)?;
    if reduction.dim() > MAX_DOFS {
        return Err(Error::MeshBcMismatch(format!("{} reduced DOFs exceed the cap of {MAX_DOFS}", reduction.dim())));
    }
    Ok(FormMatrices { mesh: mesh.clone(), m, k, s1, s2, v, b, p: coeff_bc.p, reduction })
}

impl FormMatrices {
    /// Dense reduced blocks `R†XR`.
    pub fn reduced(&self) -> ReducedForms {
        let r = &self.reduction;
        ReducedForms {
            m: hermitize(&r.project(&self.m)),
            k: hermitize(&r.project(&self.k)),
            s1: hermitize(&r.project(&self.s1)),
            s2: hermitize(&r.project(&self.s2)),
            v: hermitize(&r.project(&self.v)),
            b: hermitize(&r.project(&self.b)),
        }
    }

    /// Boundary trace of a nodal vector in layout point order.
    pub fn trace(&self, full: &CVec) -> CVec {
        Array1::from_iter((0..self.p.nrows()).map(|p| full[self.mesh.boundary_node(p)]))
    }
}

/// Dense reduced form blocks.
#[derive(Debug, Clone)]
pub struct ReducedForms {
    pub m: CMat,
    pub k: CMat,
    pub s1: CMat,
    pub s2: CMat,
    pub v: CMat,
    pub b: CMat,
}

impl ReducedForms {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// `K + uS₁ + u²S₂ + B + vV`.
    pub fn hamiltonian(&self, u: f64, v: f64) -> CMat {
        let mut h = &self.k + &self.b;
        if u != 0.0 {
            h = h + self.s1.mapv(|z| z * u) + self.s2.mapv(|z| z * (u * u));
        }
        if v != 0.0 {
            h = h + self.v.mapv(|z| z * v);
        }
        h
    }

    pub fn operator(&self, u: f64, v: f64) -> Result<ReducedOperator> {
        ReducedOperator::new(self.hamiltonian(u, v), self.m.clone())
    }

    /// Lowest `k` eigenvalues and `M_r`-orthonormal eigenvectors without the
    /// full decomposition.
    pub fn lowest(&self, u: f64, v: f64, k: usize) -> Result<(Vec<f64>, CMat)> {
        let e = lowest_generalized_eig(&self.hamiltonian(u, v), &self.m, k)?;
        Ok((e.values.to_vec(), e.vectors))
    }
}

/// Reduced Hamiltonian with its mass matrix and pencil spectrum.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    pub h: CMat,
    pub m_r: CMat,
    pub eig: GeneralizedEig,
}

impl ReducedOperator {
    pub fn new(h: CMat, m_r: CMat) -> Result<Self> {
        let eig = generalized_eig(&h, &m_r)?;
        Ok(ReducedOperator { h, m_r, eig })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig.values.first().copied().unwrap_or(f64::INFINITY)
    }

    /// `max(0, −λ_min(H, M_r))`.
    pub fn lower_bound(&self) -> f64 {
        lower_bound(self)
    }

    /// First `k` eigenvalues and `M_r`-orthonormal eigenvectors.
    pub fn spectrum(&self, k: usize) -> (Vec<f64>, CMat) {
        spectrum(self, k)
    }
}

/// `H = R†(K + uS₁ + u²S₂ + B + vV)R` with its spectrum.
pub fn reduce(fm: &FormMatrices, u: f64, v: f64) -> Result<ReducedOperator> {
    fm.reduced().operator(u, v)
}

pub fn lower_bound(op: &ReducedOperator) -> f64 {
    (-op.lambda_min()).max(0.0)
}

pub fn spectrum(op: &ReducedOperator, k: usize) -> (Vec<f64>, CMat) {
    let k = k.min(op.dim());
    let values = op.eig.values.iter().take(k).copied().collect();
    let vectors = op.eig.vectors.slice(ndarray::s![.., ..k]).to_owned();
    (values, vectors)
}

/// Relative Hermiticity defect `‖H − H†‖_F / ‖H‖_F`.
pub fn hermiticity_defect(h: &CMat) -> f64 {
    let n = fro_norm(h);
    if n == 0.0 {
        0.0
    } else {
        fro_norm(&(h - &adjoint(h))) / n
    }
}

/// Writes a dense matrix as `u64 rows, u64 cols` followed by row-major
/// `(re, im)` pairs, all little endian.
pub fn write_dense_binary(path: &Path, a: &CMat) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for z in a.iter() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_dense_binary(path: &Path) -> io::Result<CMat> {
    let bytes = std::fs::read(path)?;
    let bad = || io::Error::new(io::ErrorKind::InvalidData, "truncated matrix file");
    let word = |i: usize| -> io::Result<[u8; 8]> { bytes.get(8 * i..8 * i + 8).and_then(|s| s.try_into().ok()).ok_or_else(bad) };
    let rows = u64::from_le_bytes(word(0)?) as usize;
    let cols = u64::from_le_bytes(word(1)?) as usize;
    let mut out = Array2::zeros((rows, cols));
    for (k, z) in out.iter_mut().enumerate() {
        let re = f64::from_le_bytes(word(2 + 2 * k)?);
        let im = f64::from_le_bytes(word(3 + 2 * k)?);
        *z = C64::new(re, im);
    }
    Ok(out)
}

/// Matrix-market coordinate file (complex general) listing nonzeros.
pub fn write_matrix_market(path: &Path, a: &CMat) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let nnz = a.iter().filter(|z| z.norm() != 0.0).count();
    writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), nnz)?;
    for ((i, j), z) in a.indexed_iter() {
        if z.norm() != 0.0 {
            writeln!(w, "{} {} {:.17e} {:.17e}", i + 1, j + 1, z.re, z.im)?;
        }
    }
    w.flush()
}
