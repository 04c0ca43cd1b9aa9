#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use wearnet::autodiff::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use wearnet::autodiff::{Adjacency, AutodiffError, Matrix, Mode, Tape, Var};
use wearnet::mesh_io::UnstructuredMesh;
use wearnet::nn::{layers, Model, ModelSpec, NnError, Variant};
use wearnet::preprocess::extract_surface;
use wearnet::synth::{generate_mesh, Geometry, Resolution, SynthConfig};
use wearnet::train::{loss_on_tape, LossKind};

/// A random conforming tet mesh of at most `max_tets` cells: a random subset
/// of a subdivided lattice, with points relabeled and cell vertices shuffled.
/// Carries a random cell field `f`.
pub fn random_mesh(rng: &mut ChaCha8Rng, max_tets: usize) -> UnstructuredMesh {
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(2..=3);
    let base = generate_mesh(&SynthConfig {
        resolution: Resolution::Lattice { n, m },
        ..SynthConfig::new(Geometry::Box, 1, rng.gen())
    })
    .unwrap();
    let mut cells = base.cells.clone();
    cells.shuffle(rng);
    let keep = rng.gen_range(1..=max_tets.min(cells.len()));
    cells.truncate(keep);

    let used: BTreeSet<usize> = cells.iter().flatten().copied().collect();
    let mut order: Vec<usize> = used.into_iter().collect();
    order.shuffle(rng);
    let relabel: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let points = order.iter().map(|&p| base.points[p]).collect();
    let cells: Vec<[usize; 4]> = cells
        .into_iter()
        .map(|c| {
            let mut c = c.map(|p| relabel[&p]);
            c.shuffle(rng);
            c
        })
        .collect();
    let field = (0..cells.len())
        .map(|_| rng.gen_range(0.0..100.0))
        .collect();
    let mut mesh = UnstructuredMesh::new(points, cells);
    mesh.cell_fields.insert("f".into(), field);
    mesh
}

pub fn brute_cell_to_point(mesh: &UnstructuredMesh, field: &str) -> Vec<f64> {
    let values = &mesh.cell_fields[field];
    (0..mesh.point_count())
        .map(|p| {
            let incident: Vec<f64> = mesh
                .cells
                .iter()
                .zip(values)
                .filter(|(c, _)| c.contains(&p))
                .map(|(_, &v)| v)
                .collect();
            incident.iter().sum::<f64>() / incident.len() as f64
        })
        .collect()
}

pub struct BruteSurface {
    pub nodes: Vec<usize>,
    pub edges: BTreeSet<(usize, usize)>,
    /// sorted vertex triple -> (owning cell, opposite vertex)
    pub faces: BTreeMap<[usize; 3], (usize, usize)>,
}

/// Quadratic-time boundary extraction: a face is on the boundary when no
/// other cell has the same vertex set.
pub fn brute_surface(mesh: &UnstructuredMesh) -> BruteSurface {
    let face_of = |c: &[usize; 4], skip: usize| {
        let mut f: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| c[k]).collect();
        f.sort();
        [f[0], f[1], f[2]]
    };
    let mut faces = BTreeMap::new();
    for (ci, c) in mesh.cells.iter().enumerate() {
        for skip in 0..4 {
            let f = face_of(c, skip);
            let shared = mesh
                .cells
                .iter()
                .enumerate()
                .any(|(cj, d)| cj != ci && (0..4).any(|s| face_of(d, s) == f));
            if !shared {
                faces.insert(f, (ci, c[skip]));
            }
        }
    }
    let nodes: Vec<usize> = faces
        .keys()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut edges = BTreeSet::new();
    for f in faces.keys() {
        let l = |p: usize| nodes.iter().position(|&q| q == p).unwrap();
        let [a, b, c] = f.map(l);
        edges.insert((a.min(b), a.max(b)));
        edges.insert((a.min(c), a.max(c)));
        edges.insert((b.min(c), b.max(c)));
    }
    BruteSurface {
        nodes,
        edges,
        faces,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// Connected random graph: a spanning path plus extra random edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Arc<Adjacency> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    Arc::new(Adjacency::from_edges(n, &edges))
}

type LayerFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

fn autodiff(e: NnError) -> AutodiffError {
    match e {
        NnError::Autodiff(a) => a,
        other => panic!("unexpected model error: {other}"),
    }
}

/// Finite-difference check of each layer type with a scalar loss
/// `sum(output * r)` for a fixed random `r`.
pub fn layer_gradchecks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let adj = random_graph(&mut rng, n, 8);
    let h = random_matrix(&mut rng, n, 4);
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();

    let mut run = |name: &'static str,
                   params: Vec<Matrix>,
                   out_cols: usize,
                   rng: &mut ChaCha8Rng,
                   f: &LayerFn| {
        let r = random_matrix(rng, n, out_cols);
        let report = check_gradients(&params, &cfg, |t, v| {
            let y = f(t, v)?;
            let rv = t.constant(r.clone());
            let p = t.mul(y, rv)?;
            Ok(t.sum(p))
        })
        .unwrap();
        out.push((name, report));
    };

    let p = vec![
        h.clone(),
        random_matrix(&mut rng, 4, 3),
        random_matrix(&mut rng, 1, 3),
    ];
    let a = Arc::clone(&adj);
    run("graph_conv", p, 3, &mut rng, &move |t, v| {
        layers::graph_conv(t, v[0], &a, v[1], v[2])
    });

    let p = vec![
        h.clone(),
        random_matrix(&mut rng, 4, 3),
        random_matrix(&mut rng, 4, 3),
        random_matrix(&mut rng, 1, 3),
    ];
    let a = Arc::clone(&adj);
    run("sage_conv", p, 3, &mut rng, &move |t, v| {
        layers::sage_conv(t, v[0], &a, v[1], v[2], v[3])
    });

    let p = vec![
        h.clone(),
        random_matrix(&mut rng, 8, 3),
        random_matrix(&mut rng, 1, 3),
    ];
    let a = Arc::clone(&adj);
    run("edge_conv", p, 3, &mut rng, &move |t, v| {
        layers::edge_conv(t, v[0], &a, v[1], v[2])
    });

    let p = vec![
        h.clone(),
        random_matrix(&mut rng, n, n),
        random_matrix(&mut rng, n, 1),
    ];
    run("node_linear", p, 4, &mut rng, &|t, v| {
        layers::node_linear(t, v[0], v[1], v[2])
    });

    let p = vec![
        h.clone(),
        random_matrix(&mut rng, 4, 3),
        random_matrix(&mut rng, 1, 3),
    ];
    run("dense", p, 3, &mut rng, &|t, v| {
        layers::dense(t, v[0], v[1], v[2])
    });

    let shapes = [
        (4, 6),
        (1, 6),
        (6, 5),
        (1, 5),
        (10, 3),
        (1, 3),
        (3, 2),
        (1, 2),
    ];
    let mut p = vec![h.clone()];
    p.extend(shapes.iter().map(|&(r, c)| random_matrix(&mut rng, r, c)));
    run("pointnet", p, 2, &mut rng, &|t, v| {
        layers::pointnet(t, v[0], &v[1..])
    });
    out
}

/// Finite-difference check of the MSE loss through every full model
/// variant, dropout active with a fixed mask stream.
pub fn model_gradchecks(seed: u64) -> Vec<(Variant, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let adj = random_graph(&mut rng, n, 8);
    let x = random_matrix(&mut rng, n, 5);
    let target = Matrix::column((0..n).map(|_| rng.gen_range(0.0..2.0)).collect());
    Variant::ALL
        .iter()
        .map(|&variant| {
            let model = Model::new(ModelSpec::new(variant, n, seed)).unwrap();
            let values: Vec<Matrix> = model.params.iter().map(|p| p.value.clone()).collect();
            let report = check_gradients(&values, &GradCheckConfig::default(), |t, v| {
                let xv = t.constant(x.clone());
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let pred = model
                    .forward(t, v, xv, &adj, Mode::Train, &mut drop_rng)
                    .map_err(autodiff)?;
                let tv = t.constant(target.clone());
                loss_on_tape(t, pred, tv, LossKind::Mse)
            })
            .unwrap();
            (variant, report)
        })
        .collect()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Checks `extract_surface` against the quadratic oracle, including the
/// outward winding of every face.
pub fn surface_matches_oracle(mesh: &UnstructuredMesh) -> Result<(), String> {
    let fast = extract_surface(mesh).map_err(|e| e.to_string())?;
    let slow = brute_surface(mesh);
    if fast.nodes != slow.nodes {
        return Err(format!(
            "nodes differ: {:?} vs {:?}",
            fast.nodes, slow.nodes
        ));
    }
    let edges: std::collections::BTreeSet<_> = fast.edges.iter().copied().collect();
    if edges != slow.edges || edges.len() != fast.edges.len() {
        return Err("edge sets differ".into());
    }
    if fast.faces.len() != slow.faces.len() {
        return Err(format!(
            "{} faces vs {}",
            fast.faces.len(),
            slow.faces.len()
        ));
    }
    for face in &fast.faces {
        let mut key = face.vertices;
        key.sort();
        let &(cell, opposite) = slow
            .faces
            .get(&key)
            .ok_or_else(|| format!("face {key:?} is not a boundary face"))?;
        if cell != face.cell {
            return Err(format!("face {key:?} owned by {} not {cell}", face.cell));
        }
        let (normal, _) = face.normal_and_area(&mesh.points);
        let p = mesh.points[face.vertices[0]];
        let q = mesh.points[opposite];
        if dot(normal, [p[0] - q[0], p[1] - q[1], p[2] - q[2]]) <= 0.0 {
            return Err(format!("face {key:?} is wound inward"));
        }
    }
    Ok(())
}
