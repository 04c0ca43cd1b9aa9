//! Mesh-to-graph conversion: cell data to point data, external surface
//! extraction, adjacency and node features.

use crate::autodiff::{Adjacency, Matrix};
use crate::mesh_io::{MeshError, MeshMetadata, UnstructuredMesh};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use thiserror::Error;

/// Feature columns: x, y, z, temperature, friction coefficient.
pub const FEATURE_COUNT: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["x", "y", "z", "temperature", "friction_coefficient"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("unknown cell field '{0}'")]
    UnknownField(String),
    #[error("point {0} belongs to no cell")]
    OrphanPoint(usize),
    #[error("face {face:?} is shared by {count} tetrahedra (non-manifold)")]
    NonManifold { face: [usize; 3], count: usize },
    #[error("negative wear {value} at surface node {node}")]
    NegativeWear { node: usize, value: f64 },
    #[error("surface node {0} has no incident edge")]
    IsolatedNode(usize),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("graph '{id}' does not share the dataset topology: {reason}")]
    TopologyMismatch { id: String, reason: String },
}

/// Point-wise arithmetic mean of a cell field over the cells incident to
/// each point.
pub fn cell_to_point(mesh: &UnstructuredMesh, field: &str) -> Result<Vec<f64>, PreprocessError> {
    let values = mesh
        .cell_fields
        .get(field)
        .ok_or_else(|| PreprocessError::UnknownField(field.to_string()))?;
    let mut sum = vec![0.0; mesh.point_count()];
    let mut count = vec![0u32; mesh.point_count()];
    for (cell, &v) in mesh.cells.iter().zip(values) {
        for &p in cell {
            sum[p] += v;
            count[p] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .enumerate()
        .map(|(p, (&s, &c))| {
            if c == 0 {
                Err(PreprocessError::OrphanPoint(p))
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

/// A boundary triangle, wound so that its normal points out of the solid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    /// Original mesh point indices.
    pub vertices: [usize; 3],
}

impl BoundaryFace {
    /// Unit outward normal and area.
    pub fn normal_and_area(&self, points: &[[f64; 3]]) -> ([f64; 3], f64) {
        let [a, b, c] = self.vertices.map(|i| points[i]);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        if len == 0.0 {
            return ([0.0; 3], 0.0);
        }
        (n.map(|v| v / len), 0.5 * len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    /// Original point indices of the surface nodes, ascending.
    pub nodes: Vec<usize>,
    /// Undirected edges `(i, j)`, `i < j`, indexing into `nodes`; ascending.
    pub edges: Vec<(usize, usize)>,
    /// Boundary faces in ascending order of their sorted vertex triple.
    pub faces: Vec<BoundaryFace>,
}

const TET_FACES: [([usize; 3], usize); 4] = [
    ([1, 2, 3], 0),
    ([0, 2, 3], 1),
    ([0, 1, 3], 2),
    ([0, 1, 2], 3),
];

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Boundary faces are triangles that belong to exactly one tetrahedron.
pub fn extract_surface(mesh: &UnstructuredMesh) -> Result<Surface, PreprocessError> {
    mesh.validate()?;
    // sorted triple -> (multiplicity, first owning cell, local face)
    let mut faces: HashMap<[usize; 3], (usize, usize, usize)> =
        HashMap::with_capacity(mesh.cell_count() * 2);
    for (c, cell) in mesh.cells.iter().enumerate() {
        for (local, (idx, _)) in TET_FACES.iter().enumerate() {
            let mut key = idx.map(|k| cell[k]);
            key.sort_unstable();
            let entry = faces.entry(key).or_insert((0, c, local));
            entry.0 += 1;
        }
    }

    let mut boundary: Vec<([usize; 3], usize, usize)> = Vec::new();
    for (key, (count, cell, local)) in faces {
        match count {
            1 => boundary.push((key, cell, local)),
            2 => {}
            _ => return Err(PreprocessError::NonManifold { face: key, count }),
        }
    }
    boundary.sort_unstable_by_key(|b| b.0);

    let mut node_set = BTreeSet::new();
    let mut out_faces = Vec::with_capacity(boundary.len());
    for &(key, c, local) in &boundary {
        node_set.extend(key);
        let cell = mesh.cells[c];
        let (idx, opposite) = TET_FACES[local];
        let [p, mut q, mut r] = idx.map(|k| cell[k]);
        let pts = &mesh.points;
        let n = cross(sub(pts[q], pts[p]), sub(pts[r], pts[p]));
        if dot(n, sub(pts[cell[opposite]], pts[p])) > 0.0 {
            std::mem::swap(&mut q, &mut r);
        }
        out_faces.push(BoundaryFace {
            cell: c,
            vertices: [p, q, r],
        });
    }

    let nodes: Vec<usize> = node_set.into_iter().collect();
    let local = |p: usize| nodes.binary_search(&p).expect("surface node");
    let mut edge_set = BTreeSet::new();
    for &(key, _, _) in &boundary {
        let [a, b, c] = key.map(local);
        edge_set.insert((a, b));
        edge_set.insert((a, c));
        edge_set.insert((b, c));
    }
    Ok(Surface {
        edges: edge_set.into_iter().collect(),
        nodes,
        faces: out_faces,
    })
}

/// Surface graph of one simulation: node features and, for training data,
/// the per-node wear target.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGraph {
    pub source_id: String,
    pub node_ids: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub edges: Vec<(usize, usize)>,
    /// `N x 5`: x, y, z, temperature, friction coefficient.
    pub features: Matrix,
    /// N/m, `None` on prediction inputs.
    pub wear: Option<Vec<f64>>,
}

impl SurfaceGraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.node_count(), &self.edges)
    }

    pub fn same_topology(&self, other: &SurfaceGraph) -> bool {
        self.node_ids == other.node_ids && self.edges == other.edges
    }
}

/// Builds the surface graph of `mesh` with process parameters from `meta`.
pub fn build_graph(
    mesh: &UnstructuredMesh,
    meta: &MeshMetadata,
    wear_field: Option<&str>,
) -> Result<SurfaceGraph, PreprocessError> {
    meta.validate()?;
    let surface = extract_surface(mesh)?;
    let point_wear = match wear_field {
        Some(name) => Some(cell_to_point(mesh, name)?),
        None => None,
    };
    let n = surface.nodes.len();
    let positions: Vec<[f64; 3]> = surface.nodes.iter().map(|&p| mesh.points[p]).collect();
    let mut features = Matrix::zeros(n, FEATURE_COUNT);
    for (i, p) in positions.iter().enumerate() {
        features.row_mut(i).copy_from_slice(&[
            p[0],
            p[1],
            p[2],
            meta.temperature,
            meta.friction_coefficient,
        ]);
    }
    let wear = match point_wear {
        Some(w) => {
            let restricted: Vec<f64> = surface.nodes.iter().map(|&p| w[p]).collect();
            if let Some((node, &value)) = restricted.iter().enumerate().find(|(_, v)| !(**v >= 0.0))
            {
                return Err(PreprocessError::NegativeWear { node, value });
            }
            Some(restricted)
        }
        None => None,
    };
    let graph = SurfaceGraph {
        source_id: meta.source_id.clone(),
        node_ids: surface.nodes,
        positions,
        edges: surface.edges,
        features,
        wear,
    };
    let adj = graph.adjacency();
    if let Some(i) = (0..n).find(|&i| adj.degree(i) == 0) {
        return Err(PreprocessError::IsolatedNode(i));
    }
    Ok(graph)
}

/// Per-column affine standardization `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(columns: usize) -> Self {
        Normalization {
            shift: vec![0.0; columns],
            scale: vec![1.0; columns],
        }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        assert_eq!(features.cols(), self.shift.len(), "feature width");
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, s), k) in out.row_mut(r).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) / k;
            }
        }
        out
    }
}

/// Standardizes each feature column to zero mean and unit population
/// standard deviation over all nodes of `graphs`. Zero-variance columns keep
/// scale 1. Wear targets are not touched.
pub fn fit_normalization(graphs: &[&SurfaceGraph]) -> Result<Normalization, PreprocessError> {
    let cols = graphs
        .first()
        .ok_or(PreprocessError::EmptyTrainingSet)?
        .features
        .cols();
    let total: usize = graphs.iter().map(|g| g.features.rows()).sum();
    if total == 0 {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    let mut mean = vec![0.0; cols];
    for g in graphs {
        for r in 0..g.features.rows() {
            for (m, v) in mean.iter_mut().zip(g.features.row(r)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut var = vec![0.0; cols];
    for g in graphs {
        for r in 0..g.features.rows() {
            for ((s, v), m) in var.iter_mut().zip(g.features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let scale = var
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / total as f64).sqrt();
            // rounding residue of a constant column is not variance
            if sd <= 1e-12 * m.abs().max(1.0) {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Normalization { shift: mean, scale })
}

pub fn apply_normalization(graph: &SurfaceGraph, normalization: &Normalization) -> SurfaceGraph {
    SurfaceGraph {
        features: normalization.apply(&graph.features),
        ..graph.clone()
    }
}

/// Graphs of one die topology under different process parameters.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graphs: Vec<SurfaceGraph>,
    pub normalization: Normalization,
    adjacency: Arc<Adjacency>,
}

/// Model-ready view of one graph: normalized features, shared adjacency and
/// the wear target as a column.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub id: String,
    pub features: Matrix,
    pub adjacency: Arc<Adjacency>,
    pub target: Option<Matrix>,
}

impl PreparedGraph {
    pub fn new(graph: &SurfaceGraph, normalization: &Normalization) -> Self {
        Self::with_adjacency(graph, normalization, Arc::new(graph.adjacency()))
    }

    fn with_adjacency(
        graph: &SurfaceGraph,
        normalization: &Normalization,
        adjacency: Arc<Adjacency>,
    ) -> Self {
        PreparedGraph {
            id: graph.source_id.clone(),
            features: normalization.apply(&graph.features),
            adjacency,
            target: graph.wear.clone().map(Matrix::column),
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }
}

impl GraphDataset {
    /// Checks that all graphs share one topology and fits the normalization
    /// on the graphs at `train_indices`.
    pub fn new(
        graphs: Vec<SurfaceGraph>,
        train_indices: &[usize],
    ) -> Result<Self, PreprocessError> {
        let first = graphs.first().ok_or(PreprocessError::EmptyTrainingSet)?;
        for g in &graphs[1..] {
            if g.node_count() != first.node_count() {
                return Err(PreprocessError::TopologyMismatch {
                    id: g.source_id.clone(),
                    reason: format!(
                        "{} surface nodes, expected {}",
                        g.node_count(),
                        first.node_count()
                    ),
                });
            }
            if !g.same_topology(first) {
                return Err(PreprocessError::TopologyMismatch {
                    id: g.source_id.clone(),
                    reason: "surface node ids or edges differ".into(),
                });
            }
        }
        let train: Vec<&SurfaceGraph> = train_indices.iter().map(|&i| &graphs[i]).collect();
        let normalization = fit_normalization(&train)?;
        let adjacency = Arc::new(first.adjacency());
        Ok(GraphDataset {
            graphs,
            normalization,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    pub fn adjacency(&self) -> &Arc<Adjacency> {
        &self.adjacency
    }

    pub fn prepare(&self, index: usize) -> PreparedGraph {
        PreparedGraph::with_adjacency(
            &self.graphs[index],
            &self.normalization,
            Arc::clone(&self.adjacency),
        )
    }

    pub fn prepare_all(&self, indices: &[usize]) -> Vec<PreparedGraph> {
        indices.iter().map(|&i| self.prepare(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet_points() -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
    }

    fn two_tets() -> UnstructuredMesh {
        let mut m = UnstructuredMesh::new(unit_tet_points(), vec![[0, 1, 2, 3], [1, 2, 3, 4]]);
        m.cell_fields.insert("wear".into(), vec![100.0, 200.0]);
        m
    }

    fn single_tet() -> UnstructuredMesh {
        UnstructuredMesh::new(unit_tet_points()[..4].to_vec(), vec![[0, 1, 2, 3]])
    }

    #[test]
    fn cell_to_point_averages_incident_cells() {
        let w = cell_to_point(&two_tets(), "wear").unwrap();
        assert_eq!(w, vec![100.0, 150.0, 150.0, 150.0, 200.0]);
    }

    #[test]
    fn cell_to_point_errors() {
        assert_eq!(
            cell_to_point(&two_tets(), "temperature"),
            Err(PreprocessError::UnknownField("temperature".into()))
        );
        let mut m = two_tets();
        m.points.push([5.0, 5.0, 5.0]);
        assert_eq!(
            cell_to_point(&m, "wear"),
            Err(PreprocessError::OrphanPoint(5))
        );
    }

    #[test]
    fn single_tet_is_all_surface() {
        let s = extract_surface(&single_tet()).unwrap();
        assert_eq!(s.faces.len(), 4);
        assert_eq!(s.nodes, vec![0, 1, 2, 3]);
        assert_eq!(s.edges.len(), 6);
    }

    #[test]
    fn shared_face_is_interior() {
        let s = extract_surface(&two_tets()).unwrap();
        assert_eq!(s.faces.len(), 6);
        assert_eq!(s.nodes.len(), 5);
        assert_eq!(s.edges.len(), 9);
        assert!(!s.faces.iter().any(|f| {
            let mut v = f.vertices;
            v.sort();
            v == [1, 2, 3]
        }));
    }

    #[test]
    fn boundary_normals_point_outward() {
        let m = single_tet();
        let s = extract_surface(&m).unwrap();
        let centroid = [0.25, 0.25, 0.25];
        for f in &s.faces {
            let (n, area) = f.normal_and_area(&m.points);
            assert!(area > 0.0);
            let p = m.points[f.vertices[0]];
            assert!(dot(n, sub(p, centroid)) > 0.0);
        }
    }

    #[test]
    fn triple_shared_face_is_non_manifold() {
        let mut pts = unit_tet_points();
        pts.push([-1.0, -1.0, -1.0]);
        let m = UnstructuredMesh::new(pts, vec![[0, 1, 2, 3], [1, 2, 3, 4], [1, 2, 3, 5]]);
        assert!(matches!(
            extract_surface(&m),
            Err(PreprocessError::NonManifold {
                count: 3,
                face: [1, 2, 3]
            })
        ));
    }

    #[test]
    fn build_graph_features_and_wear() {
        let meta = MeshMetadata::new(1000.0, 0.3, "sim-1");
        let g = build_graph(&single_tet(), &meta, None).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.features.row(0), &[0.0, 0.0, 0.0, 1000.0, 0.3]);
        assert_eq!(g.features.row(1), &[1.0, 0.0, 0.0, 1000.0, 0.3]);
        assert!(g.wear.is_none());

        let g = build_graph(&two_tets(), &meta, Some("wear")).unwrap();
        assert_eq!(g.wear.unwrap(), vec![100.0, 150.0, 150.0, 150.0, 200.0]);

        let mut zero = two_tets();
        zero.cell_fields.insert("wear".into(), vec![0.0, 0.0]);
        let g = build_graph(&zero, &meta, Some("wear")).unwrap();
        assert_eq!(g.wear.unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn build_graph_rejects_negative_wear() {
        let mut m = two_tets();
        m.cell_fields.insert("wear".into(), vec![-1.0, 0.0]);
        let meta = MeshMetadata::new(1000.0, 0.3, "s");
        assert!(matches!(
            build_graph(&m, &meta, Some("wear")),
            Err(PreprocessError::NegativeWear { .. })
        ));
    }

    fn graph_with_x(xs: &[f64], temperature: f64) -> SurfaceGraph {
        let n = xs.len();
        let mut features = Matrix::zeros(n, FEATURE_COUNT);
        for (i, &x) in xs.iter().enumerate() {
            features
                .row_mut(i)
                .copy_from_slice(&[x, 0.0, 0.0, temperature, 0.3]);
        }
        SurfaceGraph {
            source_id: "g".into(),
            node_ids: (0..n).collect(),
            positions: vec![[0.0; 3]; n],
            edges: (1..n).map(|i| (i - 1, i)).collect(),
            features,
            wear: Some(vec![1.0; n]),
        }
    }

    #[test]
    fn two_point_standardization() {
        let g = graph_with_x(&[0.0, 2.0], 1000.0);
        let norm = fit_normalization(&[&g]).unwrap();
        assert_eq!(norm.shift[0], 1.0);
        assert_eq!(norm.scale[0], 1.0);
        let out = apply_normalization(&g, &norm);
        assert_eq!(out.features.get(0, 0), -1.0);
        assert_eq!(out.features.get(1, 0), 1.0);
        assert_eq!(out.wear, g.wear);
    }

    #[test]
    fn constant_column_shifts_only() {
        let g = graph_with_x(&[0.0, 2.0, 5.0], 1000.0);
        let norm = fit_normalization(&[&g]).unwrap();
        assert_eq!(norm.shift[3], 1000.0);
        assert_eq!(norm.scale[3], 1.0);
        assert_eq!(norm.scale[4], 1.0);
        let out = apply_normalization(&g, &norm);
        assert!((0..3).all(|r| out.features.get(r, 3) == 0.0));
    }

    #[test]
    fn refit_after_normalization_is_identity() {
        let a = graph_with_x(&[0.0, 2.0, 7.0], 900.0);
        let b = graph_with_x(&[1.0, -3.0, 4.0], 1100.0);
        let norm = fit_normalization(&[&a, &b]).unwrap();
        let na = apply_normalization(&a, &norm);
        let nb = apply_normalization(&b, &norm);
        let again = fit_normalization(&[&na, &nb]).unwrap();
        for k in 0..FEATURE_COUNT {
            assert!(
                again.shift[k].abs() < 1e-12,
                "shift {k}: {}",
                again.shift[k]
            );
            assert!(
                (again.scale[k] - 1.0).abs() < 1e-12,
                "scale {k}: {}",
                again.scale[k]
            );
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert_eq!(
            fit_normalization(&[]),
            Err(PreprocessError::EmptyTrainingSet)
        );
    }

    #[test]
    fn dataset_rejects_mixed_topologies() {
        let a = graph_with_x(&[0.0, 1.0, 2.0], 900.0);
        let b = graph_with_x(&[0.0, 1.0], 900.0);
        assert!(matches!(
            GraphDataset::new(vec![a.clone(), b], &[0]),
            Err(PreprocessError::TopologyMismatch { .. })
        ));
        let mut c = a.clone();
        c.edges = vec![(0, 2), (1, 2)];
        assert!(GraphDataset::new(vec![a.clone(), c], &[0]).is_err());
        let ds = GraphDataset::new(vec![a.clone(), a], &[0, 1]).unwrap();
        assert_eq!(ds.node_count(), 3);
        assert_eq!(ds.prepare(1).target.unwrap().shape(), (3, 1));
    }
}
