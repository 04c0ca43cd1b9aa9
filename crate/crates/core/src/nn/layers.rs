//! Graph convolution layers and the node-dimension linear layer, expressed
//! as compositions of tape primitives.

use crate::autodiff::{Adjacency, AutodiffError, Tape, Var};
use std::sync::Arc;

/// Symmetrically normalized graph convolution with self-loops:
/// `D^-1/2 (A + I) D^-1/2 H W + b`.
pub fn graph_conv(
    tape: &mut Tape,
    h: Var,
    adj: &Arc<Adjacency>,
    w: Var,
    b: Var,
) -> Result<Var, AutodiffError> {
    // Aggregate on the narrower side of W.
    let out = if w.rows() <= w.cols() {
        let agg = tape.gcn_aggregate(h, adj)?;
        tape.matmul(agg, w)?
    } else {
        let hw = tape.matmul(h, w)?;
        tape.gcn_aggregate(hw, adj)?
    };
    tape.add_row(out, b)
}

/// GraphSAGE with mean aggregation: `h_i W_self + mean_j h_j W_neigh + b`.
/// A node without neighbors gets a zero neighbor term.
pub fn sage_conv(
    tape: &mut Tape,
    h: Var,
    adj: &Arc<Adjacency>,
    w_self: Var,
    w_neigh: Var,
    b: Var,
) -> Result<Var, AutodiffError> {
    let own = tape.matmul(h, w_self)?;
    let mean = tape.neighbor_mean(h, adj)?;
    let neigh = tape.matmul(mean, w_neigh)?;
    let sum = tape.add(own, neigh)?;
    tape.add_row(sum, b)
}

/// Edge convolution over the static adjacency with max aggregation:
/// `h'_i = max_j [h_i | h_j - h_i] W_theta + b`.
///
/// With `W_theta = [T; B]` the edge message is `h_i (T - B) + h_j B + b`, so
/// the max only has to run over `h_j B`. A node without neighbors gets
/// `[h_i | 0] W_theta + b`.
pub fn edge_conv(
    tape: &mut Tape,
    h: Var,
    adj: &Arc<Adjacency>,
    w_theta: Var,
    b: Var,
) -> Result<Var, AutodiffError> {
    let f = h.cols();
    if w_theta.rows() != 2 * f {
        return Err(AutodiffError::Shape {
            op: "edge_conv",
            lhs: h.shape(),
            rhs: w_theta.shape(),
        });
    }
    let top = tape.slice_rows(w_theta, 0, f)?;
    let bottom = tape.slice_rows(w_theta, f, 2 * f)?;
    let center_w = tape.sub(top, bottom)?;
    let center = tape.matmul(h, center_w)?;
    let neighbor = tape.matmul(h, bottom)?;
    let pooled = tape.neighbor_max(neighbor, adj)?;
    let sum = tape.add(center, pooled)?;
    tape.add_row(sum, b)
}

/// Linear map across the node dimension, shared by every feature channel:
/// `Y = W H + b`, with `W: N x N` and `b: N x 1` broadcast over channels.
pub fn node_linear(tape: &mut Tape, h: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = tape.matmul(w, h)?;
    tape.add_col(y, b)
}

/// Per-node affine map `H W + b` (a width-1 convolution).
pub fn dense(tape: &mut Tape, h: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = tape.matmul(h, w)?;
    tape.add_row(y, b)
}

/// PointNet-style segmentation head: shared MLP 5 -> 50 -> 100, global max
/// pool, concatenation of the global feature to every point, then shared
/// MLP 200 -> 50 -> 1. ReLU after every layer.
///
/// `params` holds `[w1, b1, w2, b2, w3, b3, w4, b4]`.
pub fn pointnet(tape: &mut Tape, h: Var, params: &[Var]) -> Result<Var, AutodiffError> {
    assert_eq!(params.len(), 8, "pointnet takes four weight/bias pairs");
    let h1 = dense(tape, h, params[0], params[1])?;
    let h1 = tape.relu(h1);
    let h2 = dense(tape, h1, params[2], params[3])?;
    let h2 = tape.relu(h2);
    let global = tape.max_rows(h2)?;
    let spread = tape.gather_rows(global, &vec![0; h2.rows()])?;
    let joined = tape.concat_cols(h2, spread)?;
    let h3 = dense(tape, joined, params[4], params[5])?;
    let h3 = tape.relu(h3);
    let out = dense(tape, h3, params[6], params[7])?;
    Ok(tape.relu(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, GradCheckConfig};
    use crate::autodiff::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    fn eval(f: impl FnOnce(&mut Tape) -> Result<Var, AutodiffError>) -> Matrix {
        let mut tape = Tape::new();
        let out = f(&mut tape).unwrap();
        tape.value(out).clone()
    }

    fn path3() -> Arc<Adjacency> {
        Arc::new(Adjacency::from_edges(3, &[(0, 1), (1, 2)]))
    }

    #[test]
    fn graph_conv_on_path_graph() {
        let out = eval(|t| {
            let h = t.constant(Matrix::filled(3, 1, 1.0));
            let w = t.constant(Matrix::filled(1, 1, 1.0));
            let b = t.constant(Matrix::zeros(1, 1));
            graph_conv(t, h, &path3(), w, b)
        });
        let expected = 0.5 + 1.0 / 6f64.sqrt();
        assert!((out.get(0, 0) - expected).abs() < 1e-15);
        assert!((out.get(0, 0) - 0.90825).abs() < 1e-5);
    }

    #[test]
    fn graph_conv_without_edges_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h0 = random(&mut rng, 4, 3);
        let w0 = random(&mut rng, 3, 2);
        let b0 = random(&mut rng, 1, 2);
        let adj = Arc::new(Adjacency::from_edges(4, &[]));
        let out = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(w0.clone()),
                t.constant(b0.clone()),
            );
            graph_conv(t, h, &adj, w, b)
        });
        let expected = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(w0.clone()),
                t.constant(b0.clone()),
            );
            dense(t, h, w, b)
        });
        for (a, e) in out.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn sage_mean_of_neighbors() {
        let adj = Arc::new(Adjacency::from_edges(3, &[(0, 1), (0, 2)]));
        let out = eval(|t| {
            let h = t.constant(Matrix::column(vec![0.0, 2.0, 4.0]));
            let one = t.constant(Matrix::filled(1, 1, 1.0));
            let b = t.constant(Matrix::zeros(1, 1));
            sage_conv(t, h, &adj, one, one, b)
        });
        assert_eq!(out.get(0, 0), 3.0);
    }

    #[test]
    fn sage_with_zero_neighbor_weight_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h0 = random(&mut rng, 5, 3);
        let ws = random(&mut rng, 3, 4);
        let b0 = random(&mut rng, 1, 4);
        let adj = Arc::new(Adjacency::from_edges(5, &random_graph(&mut rng, 5, 0.5)));
        let out = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(ws.clone()),
                t.constant(b0.clone()),
            );
            let zero = t.constant(Matrix::zeros(3, 4));
            sage_conv(t, h, &adj, w, zero, b)
        });
        let expected = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(ws.clone()),
                t.constant(b0.clone()),
            );
            dense(t, h, w, b)
        });
        assert_eq!(out, expected);
    }

    #[test]
    fn edge_conv_projection_recovers_center_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = 3;
        let h0 = random(&mut rng, 6, f);
        let mut w0 = Matrix::zeros(2 * f, f);
        for k in 0..f {
            w0.set(k, k, 1.0);
        }
        let adj = Arc::new(Adjacency::from_edges(6, &random_graph(&mut rng, 6, 0.6)));
        let out = eval(|t| {
            let h = t.constant(h0.clone());
            let w = t.constant(w0.clone());
            let b = t.constant(Matrix::zeros(1, f));
            edge_conv(t, h, &adj, w, b)
        });
        assert_eq!(out, h0);
    }

    #[test]
    fn edge_conv_equal_features_cancel_difference() {
        let adj = Arc::new(Adjacency::from_edges(2, &[(0, 1)]));
        let h0 = Matrix::from_rows(&[vec![0.5, -1.0], vec![0.5, -1.0]]);
        let w0 = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 0.0],
            vec![7.0, 7.0, 7.0],
            vec![-9.0, 9.0, 1.0],
        ]);
        let b0 = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]);
        let out = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(w0.clone()),
                t.constant(b0.clone()),
            );
            edge_conv(t, h, &adj, w, b)
        });
        // [h | 0] W + b
        let expected = [0.5 + 1.0 + 0.1, 1.0 - 0.5 + 0.2, 1.5 + 0.3];
        for r in 0..2 {
            for (a, e) in out.row(r).iter().zip(expected) {
                assert!((a - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn edge_conv_matches_brute_force_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, f, fo) = (5, 3, 4);
        let h0 = random(&mut rng, n, f);
        let w0 = random(&mut rng, 2 * f, fo);
        let b0 = random(&mut rng, 1, fo);
        let edges = random_graph(&mut rng, n, 0.5);
        let adj = Arc::new(Adjacency::from_edges(n, &edges));
        let out = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(w0.clone()),
                t.constant(b0.clone()),
            );
            edge_conv(t, h, &adj, w, b)
        });
        for i in 0..n {
            let mut nbrs: Vec<usize> = edges
                .iter()
                .filter_map(|&(a, b)| {
                    if a == i {
                        Some(b)
                    } else if b == i {
                        Some(a)
                    } else {
                        None
                    }
                })
                .collect();
            let mut zero_diff = false;
            if nbrs.is_empty() {
                nbrs.push(i);
                zero_diff = true;
            }
            for c in 0..fo {
                let mut best = f64::NEG_INFINITY;
                for &j in &nbrs {
                    let mut msg = b0.get(0, c);
                    for k in 0..f {
                        let diff = if zero_diff {
                            0.0
                        } else {
                            h0.get(j, k) - h0.get(i, k)
                        };
                        msg += h0.get(i, k) * w0.get(k, c) + diff * w0.get(f + k, c);
                    }
                    best = best.max(msg);
                }
                // the center/neighbor split reassociates the same sum
                assert!(
                    (out.get(i, c) - best).abs() <= 1e-12 * best.abs().max(1.0),
                    "node {i} channel {c}: {} vs {best}",
                    out.get(i, c)
                );
            }
        }
    }

    #[test]
    fn node_linear_identity_and_swap() {
        let h0 = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let out = eval(|t| {
            let h = t.constant(h0.clone());
            let w = t.constant(Matrix::identity(2));
            let b = t.constant(Matrix::zeros(2, 1));
            node_linear(t, h, w, b)
        });
        assert_eq!(out, h0);
        let out = eval(|t| {
            let h = t.constant(h0.clone());
            let w = t.constant(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
            let b = t.constant(Matrix::zeros(2, 1));
            node_linear(t, h, w, b)
        });
        assert_eq!(out.row(0), h0.row(1));
        assert_eq!(out.row(1), h0.row(0));
    }

    #[test]
    fn node_linear_matches_per_column_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, f) = (4, 3);
        let h0 = random(&mut rng, n, f);
        let w0 = random(&mut rng, n, n);
        let b0 = random(&mut rng, n, 1);
        let out = eval(|t| {
            let (h, w, b) = (
                t.constant(h0.clone()),
                t.constant(w0.clone()),
                t.constant(b0.clone()),
            );
            node_linear(t, h, w, b)
        });
        for c in 0..f {
            let x: Vec<f64> = (0..n).map(|r| h0.get(r, c)).collect();
            for r in 0..n {
                let y: f64 = (0..n).map(|k| w0.get(r, k) * x[k]).sum::<f64>() + b0.get(r, 0);
                assert!((out.get(r, c) - y).abs() < 1e-14);
            }
        }
        let wrong = eval(|t| {
            let h = t.constant(Matrix::zeros(3, 2));
            let w = t.constant(w0.clone());
            let b = t.constant(b0.clone());
            node_linear(t, h, w, b).or_else(|e| {
                assert!(matches!(e, AutodiffError::Shape { .. }));
                Ok(t.constant(Matrix::zeros(0, 0)))
            })
        });
        assert!(wrong.is_empty());
    }

    fn pointnet_params(rng: &mut ChaCha8Rng) -> Vec<Matrix> {
        vec![
            random(rng, 5, 50),
            random(rng, 1, 50),
            random(rng, 50, 100),
            random(rng, 1, 100),
            random(rng, 200, 50),
            random(rng, 1, 50),
            random(rng, 50, 1),
            random(rng, 1, 1),
        ]
    }

    fn run_pointnet(h0: &Matrix, params: &[Matrix]) -> Matrix {
        eval(|t| {
            let h = t.constant(h0.clone());
            let p: Vec<Var> = params.iter().map(|m| t.constant(m.clone())).collect();
            pointnet(t, h, &p)
        })
    }

    #[test]
    fn pointnet_single_point_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = pointnet_params(&mut rng);
        let h0 = random(&mut rng, 3, 5);
        let out = run_pointnet(&h0, &params);
        assert_eq!(out.shape(), (3, 1));

        // duplicated rows leave the pooled feature, hence each output, unchanged
        let mut rows: Vec<Vec<f64>> = (0..3).map(|r| h0.row(r).to_vec()).collect();
        rows.extend(rows.clone());
        let doubled = run_pointnet(&Matrix::from_rows(&rows), &params);
        for r in 0..3 {
            assert_eq!(doubled.get(r, 0), out.get(r, 0));
            assert_eq!(doubled.get(r + 3, 0), out.get(r, 0));
        }

        let single = Matrix::from_rows(&[h0.row(0).to_vec()]);
        assert_eq!(run_pointnet(&single, &params).shape(), (1, 1));
    }

    #[test]
    fn pointnet_zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = pointnet_params(&mut rng);
        for k in [1, 3, 5, 7] {
            params[k] = Matrix::zeros(params[k].rows(), params[k].cols());
        }
        let out = run_pointnet(&Matrix::zeros(4, 5), &params);
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(p).copy_from_slice(m.row(i));
        }
        out
    }

    #[test]
    fn conv_layers_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10;
        let h0 = random(&mut rng, n, 3);
        let w1 = random(&mut rng, 3, 4);
        let w2 = random(&mut rng, 3, 4);
        let we = random(&mut rng, 6, 4);
        let b0 = random(&mut rng, 1, 4);
        let adj = Arc::new(Adjacency::from_edges(n, &random_graph(&mut rng, n, 0.3)));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.swap(2, 7);
        let padj = Arc::new(adj.permuted(&perm));
        let ph = permute_rows(&h0, &perm);

        type Layer = fn(&mut Tape, Var, &Arc<Adjacency>, &[Var]) -> Result<Var, AutodiffError>;
        let layers: [(&str, Layer); 3] = [
            ("graph_conv", |t, h, a, p| graph_conv(t, h, a, p[0], p[3])),
            ("sage_conv", |t, h, a, p| {
                sage_conv(t, h, a, p[0], p[1], p[3])
            }),
            ("edge_conv", |t, h, a, p| edge_conv(t, h, a, p[2], p[3])),
        ];
        for (name, layer) in layers {
            let run = |h: &Matrix, a: &Arc<Adjacency>| {
                eval(|t| {
                    let hv = t.constant(h.clone());
                    let p: Vec<Var> = [&w1, &w2, &we, &b0]
                        .iter()
                        .map(|m| t.constant((*m).clone()))
                        .collect();
                    layer(t, hv, a, &p)
                })
            };
            let base = permute_rows(&run(&h0, &adj), &perm);
            let moved = run(&ph, &padj);
            for (x, y) in base.as_slice().iter().zip(moved.as_slice()) {
                assert!((x - y).abs() < 1e-12, "{name} not equivariant");
            }
        }
    }

    #[test]
    fn node_linear_is_not_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let h0 = random(&mut rng, n, 3);
        let w0 = random(&mut rng, n, n);
        let b0 = random(&mut rng, n, 1);
        let perm: Vec<usize> = (0..n).map(|i| (i + 3) % n).collect();
        let run = |h: &Matrix| {
            eval(|t| {
                let (h, w, b) = (
                    t.constant(h.clone()),
                    t.constant(w0.clone()),
                    t.constant(b0.clone()),
                );
                node_linear(t, h, w, b)
            })
        };
        let base = permute_rows(&run(&h0), &perm);
        let moved = run(&permute_rows(&h0, &perm));
        assert!(base.zip_map(&moved, |a, b| (a - b).abs()).max_abs() > 1e-3);
    }

    #[test]
    fn every_layer_passes_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10;
        let adj = Arc::new(Adjacency::from_edges(n, &random_graph(&mut rng, n, 0.3)));
        let weights = random(&mut rng, n, 4);
        let cfg = GradCheckConfig::default();
        let contract = |t: &mut Tape, out: Var| -> Result<Var, AutodiffError> {
            let w = t.constant(weights.clone());
            let m = t.mul(out, w)?;
            Ok(t.sum(m))
        };
        let h = random(&mut rng, n, 3);

        let params = vec![h.clone(), random(&mut rng, 3, 4), random(&mut rng, 1, 4)];
        let r = check_gradients(&params, &cfg, |t, v| {
            let o = graph_conv(t, v[0], &adj, v[1], v[2])?;
            contract(t, o)
        })
        .unwrap();
        assert!(r.passed(), "graph_conv: {:?}", r.failures);

        let params = vec![
            h.clone(),
            random(&mut rng, 3, 4),
            random(&mut rng, 3, 4),
            random(&mut rng, 1, 4),
        ];
        let r = check_gradients(&params, &cfg, |t, v| {
            let o = sage_conv(t, v[0], &adj, v[1], v[2], v[3])?;
            contract(t, o)
        })
        .unwrap();
        assert!(r.passed(), "sage_conv: {:?}", r.failures);

        let params = vec![h.clone(), random(&mut rng, 6, 4), random(&mut rng, 1, 4)];
        let r = check_gradients(&params, &cfg, |t, v| {
            let o = edge_conv(t, v[0], &adj, v[1], v[2])?;
            contract(t, o)
        })
        .unwrap();
        assert!(r.passed(), "edge_conv: {:?}", r.failures);

        let params = vec![
            random(&mut rng, n, 4),
            random(&mut rng, n, n),
            random(&mut rng, n, 1),
        ];
        let r = check_gradients(&params, &cfg, |t, v| {
            let o = node_linear(t, v[0], v[1], v[2])?;
            contract(t, o)
        })
        .unwrap();
        assert!(r.passed(), "node_linear: {:?}", r.failures);
    }
}
