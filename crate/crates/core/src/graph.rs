//! Metric graphs with a labelled partition of the boundary.
//!
//! Every edge is the interval `[0, ℓ]`; its two endpoints (`tail` at 0, `head`
//! at ℓ) are boundary points. Each boundary point belongs either to exactly one
//! junction (a vertex where boundary points are coupled) or to the exterior
//! boundary, which carries Dirichlet conditions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Tail,
    Head,
}

impl Endpoint {
    pub fn offset(self) -> usize {
        match self {
            Endpoint::Tail => 0,
            Endpoint::Head => 1,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tail => f.write_str("tail"),
            Endpoint::Head => f.write_str("head"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub length: f64,
    pub mesh_hint: Option<f64>,
}

impl Edge {
    pub fn vertex_at(&self, endpoint: Endpoint) -> usize {
        match endpoint {
            Endpoint::Tail => self.tail,
            Endpoint::Head => self.head,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub vertex: usize,
    pub points: Vec<(usize, Endpoint)>,
}

/// JSON form of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeDocument>,
    #[serde(default)]
    pub junctions: BTreeMap<String, Vec<(String, Endpoint)>>,
    #[serde(default)]
    pub exterior: Vec<(String, Endpoint)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDocument {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<f64>,
}

/// Validated quantum graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
    junctions: Vec<Junction>,
    exterior: Vec<(usize, Endpoint)>,
}

impl MetricGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidDocument(e.to_string()))?;
        Self::build(&doc)
    }

    /// Validates a graph document and returns the circuit.
    pub fn build(doc: &GraphDocument) -> Result<Self> {
        let mut vertex_index = HashMap::new();
        for (i, v) in doc.vertices.iter().enumerate() {
            if vertex_index.insert(v.clone(), i).is_some() {
                return Err(Error::DuplicateId(v.clone()));
            }
        }
        let lookup_vertex = |name: &str| -> Result<usize> {
            vertex_index.get(name).copied().ok_or_else(|| Error::UnknownVertex(name.to_string()))
        };

        let mut edge_index = HashMap::new();
        let mut edges = Vec::with_capacity(doc.edges.len());
        for (i, e) in doc.edges.iter().enumerate() {
            if edge_index.insert(e.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(Error::NonpositiveLength { edge: e.id.clone(), length: e.length });
            }
            if let Some(h) = e.mesh {
                if !(h > 0.0) {
                    return Err(Error::InvalidDocument(format!("edge {} has mesh hint {h}", e.id)));
                }
            }
            edges.push(Edge {
                id: e.id.clone(),
                tail: lookup_vertex(&e.from)?,
                head: lookup_vertex(&e.to)?,
                length: e.length,
                mesh_hint: e.mesh,
            });
        }
        let lookup_edge = |name: &str| -> Result<usize> {
            edge_index.get(name).copied().ok_or_else(|| Error::UnknownEdge(name.to_string()))
        };

        let mut assigned = vec![false; 2 * edges.len()];
        let mut claim = |edge: usize, endpoint: Endpoint| -> Result<()> {
            let slot = &mut assigned[2 * edge + endpoint.offset()];
            if *slot {
                return Err(Error::DuplicateAssignment {
                    edge: doc.edges[edge].id.clone(),
                    endpoint: endpoint.to_string(),
                });
            }
            *slot = true;
            Ok(())
        };

        let mut junctions = Vec::new();
        for (vname, points) in &doc.junctions {
            let vertex = lookup_vertex(vname)?;
            if points.is_empty() {
                return Err(Error::EmptyJunction(vname.clone()));
            }
            let mut resolved = Vec::with_capacity(points.len());
            for (ename, endpoint) in points {
                let edge = lookup_edge(ename)?;
                if edges[edge].vertex_at(*endpoint) != vertex {
                    return Err(Error::IncidenceMismatch {
                        vertex: vname.clone(),
                        edge: ename.clone(),
                        endpoint: endpoint.to_string(),
                    });
                }
                claim(edge, *endpoint)?;
                resolved.push((edge, *endpoint));
            }
            junctions.push(Junction { vertex, points: resolved });
        }
        junctions.sort_by_key(|j| j.vertex);

        let mut exterior = Vec::new();
        for (ename, endpoint) in &doc.exterior {
            let edge = lookup_edge(ename)?;
            claim(edge, *endpoint)?;
            exterior.push((edge, *endpoint));
        }
        exterior.sort();

        for (slot, taken) in assigned.iter().enumerate() {
            if !taken {
                let endpoint = if slot % 2 == 0 { Endpoint::Tail } else { Endpoint::Head };
                return Err(Error::DanglingEndpoint {
                    edge: doc.edges[slot / 2].id.clone(),
                    endpoint: endpoint.to_string(),
                });
            }
        }

        let graph = MetricGraph { vertices: doc.vertices.clone(), edges, junctions, exterior };
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(graph)
    }

    fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        if n == 0 || self.edges.is_empty() {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..n).all(|v| find(&mut parent, v) == root)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    id: e.id.clone(),
                    from: self.vertices[e.tail].clone(),
                    to: self.vertices[e.head].clone(),
                    length: e.length,
                    mesh: e.mesh_hint,
                })
                .collect(),
            junctions: self
                .junctions
                .iter()
                .map(|j| {
                    let pts = j.points.iter().map(|(e, ep)| (self.edges[*e].id.clone(), *ep)).collect();
                    (self.vertices[j.vertex].clone(), pts)
                })
                .collect(),
            exterior: self.exterior.iter().map(|(e, ep)| (self.edges[*e].id.clone(), *ep)).collect(),
        }
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn exterior(&self) -> &[(usize, Endpoint)] {
        &self.exterior
    }

    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn vertex_by_id(&self, id: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == id)
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Enumerates the boundary points: edges in declaration order, tail before
    /// head. Junction blocks follow vertex declaration order.
    pub fn boundary_index(&self) -> BoundaryLayout {
        let mut points: Vec<BoundaryPoint> = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(e, _)| {
                [Endpoint::Tail, Endpoint::Head].map(|endpoint| BoundaryPoint {
                    edge: e,
                    endpoint,
                    owner: Owner::Exterior,
                })
            })
            .collect();
        let mut block_order = Vec::with_capacity(points.len());
        let mut blocks = Vec::with_capacity(self.junctions.len());
        for (j, junction) in self.junctions.iter().enumerate() {
            let start = block_order.len();
            for &(edge, endpoint) in &junction.points {
                let p = 2 * edge + endpoint.offset();
                points[p].owner = Owner::Junction(j);
                block_order.push(p);
            }
            blocks.push(JunctionBlock { vertex: junction.vertex, range: start..block_order.len() });
        }
        let exterior: Vec<usize> = self.exterior.iter().map(|(e, ep)| 2 * e + ep.offset()).collect();
        block_order.extend(exterior.iter().copied());
        BoundaryLayout { points, block_order, blocks, exterior }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Junction(usize),
    Exterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub edge: usize,
    pub endpoint: Endpoint,
    pub owner: Owner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionBlock {
    pub vertex: usize,
    /// Range into [`BoundaryLayout::block_order`].
    pub range: Range<usize>,
}

/// Enumeration of boundary points. Point `p` sits on edge `p / 2`, at the tail
/// when `p` is even. `block_order` is the permutation that makes every
/// junction a contiguous block, followed by the exterior points.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLayout {
    pub points: Vec<BoundaryPoint>,
    pub block_order: Vec<usize>,
    pub blocks: Vec<JunctionBlock>,
    pub exterior: Vec<usize>,
}

impl BoundaryLayout {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point indices of junction `j`, in junction listing order.
    pub fn junction_points(&self, j: usize) -> &[usize] {
        &self.block_order[self.blocks[j].range.clone()]
    }

    pub fn point_index(edge: usize, endpoint: Endpoint) -> usize {
        2 * edge + endpoint.offset()
    }

    /// Key `vertex/edge/endpoint` used in configuration files.
    pub fn point_key(&self, graph: &MetricGraph, p: usize) -> String {
        let pt = &self.points[p];
        let e = &graph.edges()[pt.edge];
        format!("{}/{}/{}", graph.vertices()[e.vertex_at(pt.endpoint)], e.id, pt.endpoint)
    }
}

/// Small circuits used throughout tests, examples and the CLI.
pub mod presets {
    use super::*;

    fn doc(
        vertices: &[&str],
        edges: &[(&str, &str, &str, f64)],
        junctions: &[(&str, &[(&str, Endpoint)])],
        exterior: &[(&str, Endpoint)],
    ) -> GraphDocument {
        GraphDocument {
            vertices: vertices.iter().map(|s| s.to_string()).collect(),
            edges: edges
                .iter()
                .map(|(id, from, to, length)| EdgeDocument {
                    id: id.to_string(),
                    from: from.to_string(),
                    to: to.to_string(),
                    length: *length,
                    mesh: None,
                })
                .collect(),
            junctions: junctions
                .iter()
                .map(|(v, pts)| (v.to_string(), pts.iter().map(|(e, ep)| (e.to_string(), *ep)).collect()))
                .collect(),
            exterior: exterior.iter().map(|(e, ep)| (e.to_string(), *ep)).collect(),
        }
    }

    /// Single edge with both endpoints exterior (Dirichlet interval).
    pub fn interval(length: f64) -> MetricGraph {
        let d = doc(
            &["a", "b"],
            &[("e", "a", "b", length)],
            &[],
            &[("e", Endpoint::Tail), ("e", Endpoint::Head)],
        );
        MetricGraph::build(&d).expect("valid preset")
    }

    /// Single edge, tail in a one-point junction (Robin end), head exterior.
    pub fn robin_interval(length: f64) -> MetricGraph {
        let d = doc(
            &["a", "b"],
            &[("e", "a", "b", length)],
            &[("a", &[("e", Endpoint::Tail)])],
            &[("e", Endpoint::Head)],
        );
        MetricGraph::build(&d).expect("valid preset")
    }

    /// Two edges glued at a middle vertex, outer ends exterior.
    pub fn glued_pair(l1: f64, l2: f64) -> MetricGraph {
        let d = doc(
            &["a", "m", "b"],
            &[("e1", "a", "m", l1), ("e2", "m", "b", l2)],
            &[("m", &[("e1", Endpoint::Head), ("e2", Endpoint::Tail)])],
            &[("e1", Endpoint::Tail), ("e2", Endpoint::Head)],
        );
        MetricGraph::build(&d).expect("valid preset")
    }

    /// Edge `e1: v1 → v2` and loop `e2: v2 → v2`; junctions
    /// `{0_e1}` at v1 and `{1_e1, 0_e2, 1_e2}` at v2, no exterior boundary.
    pub fn lasso() -> MetricGraph {
        let d = lasso_document();
        MetricGraph::build(&d).expect("valid preset")
    }

    pub fn lasso_document() -> GraphDocument {
        doc(
            &["v1", "v2"],
            &[("e1", "v1", "v2", 1.0), ("e2", "v2", "v2", 1.0)],
            &[
                ("v1", &[("e1", Endpoint::Tail)]),
                ("v2", &[("e1", Endpoint::Head), ("e2", Endpoint::Tail), ("e2", Endpoint::Head)]),
            ],
            &[],
        )
    }
}
