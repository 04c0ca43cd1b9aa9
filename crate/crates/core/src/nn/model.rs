use super::layers::{edge_conv, graph_conv, node_linear, pointnet, sage_conv};
use super::NnError;
use crate::autodiff::{Adjacency, Matrix, Mode, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Feature widths through every architecture: 5 inputs up to 100 and back
/// down to one wear value per node.
pub const WIDTHS: [usize; 5] = [5, 50, 100, 50, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GraphConvBaseline,
    PointnetBaseline,
    EdgeConvLinear,
    SageConvLinear,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::GraphConvBaseline,
        Variant::PointnetBaseline,
        Variant::EdgeConvLinear,
        Variant::SageConvLinear,
    ];

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::GraphConvBaseline => "graphconv",
            Variant::PointnetBaseline => "pointnet",
            Variant::EdgeConvLinear => "edgeconv-l",
            Variant::SageConvLinear => "sageconv-l",
        }
    }

    /// Row label in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::GraphConvBaseline => "Graph Convolution",
            Variant::PointnetBaseline => "PointNet",
            Variant::EdgeConvLinear => "Edge Convolution(L)",
            Variant::SageConvLinear => "SAGE convolution(L)",
        }
    }

    /// Whether the model contains the node-dimension linear layer and is
    /// therefore bound to one node count.
    pub fn has_node_linear(self) -> bool {
        matches!(self, Variant::EdgeConvLinear | Variant::SageConvLinear)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Variant {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graphconv" | "graph_conv_baseline" => Ok(Variant::GraphConvBaseline),
            "pointnet" | "pointnet_baseline" => Ok(Variant::PointnetBaseline),
            "edgeconv-l" | "edge_conv_linear" => Ok(Variant::EdgeConvLinear),
            "sageconv-l" | "sage_conv_linear" => Ok(Variant::SageConvLinear),
            other => Err(NnError::UnknownVariant(other.to_string())),
        }
    }
}

/// Where dropout sits around the node-linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    #[default]
    BeforeOnly,
    BeforeAndAfter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub widths: Vec<usize>,
    pub dropout_p: f64,
    #[serde(default)]
    pub dropout_placement: DropoutPlacement,
    /// Surface node count; required by the node-linear variants.
    pub node_count: Option<usize>,
    pub seed: u64,
}

impl ModelSpec {
    pub const DEFAULT_DROPOUT: f64 = 0.2;

    pub fn new(variant: Variant, node_count: usize, seed: u64) -> Self {
        ModelSpec {
            variant,
            widths: WIDTHS.to_vec(),
            dropout_p: Self::DEFAULT_DROPOUT,
            dropout_placement: DropoutPlacement::default(),
            node_count: Some(node_count),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths != WIDTHS {
            return Err(NnError::InvalidSpec(format!(
                "widths must be {WIDTHS:?}, got {:?}",
                self.widths
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NnError::InvalidSpec(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.variant.has_node_linear() {
            match self.node_count {
                Some(n) if n >= 1 => {}
                _ => {
                    return Err(NnError::InvalidSpec(format!(
                        "{} needs a node count >= 1",
                        self.variant
                    )))
                }
            }
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let w = &self.widths;
        let mut out = Vec::new();
        let mut push = |name: String, r: usize, c: usize| out.push((name, r, c));
        match self.variant {
            Variant::GraphConvBaseline => {
                let ladder = [
                    (w[0], w[1]),
                    (w[1], w[2]),
                    (w[2], w[2]),
                    (w[2], w[3]),
                    (w[3], w[4]),
                ];
                for (i, (a, b)) in ladder.into_iter().enumerate() {
                    push(format!("gc{}.weight", i + 1), a, b);
                    push(format!("gc{}.bias", i + 1), 1, b);
                }
            }
            Variant::EdgeConvLinear | Variant::SageConvLinear => {
                let n = self.node_count.unwrap_or(0);
                let convs = [(w[0], w[1]), (w[1], w[2]), (w[2], w[3]), (w[3], w[4])];
                for (i, (a, b)) in convs.into_iter().enumerate() {
                    let layer = i + 1;
                    if self.variant == Variant::EdgeConvLinear {
                        push(format!("ec{layer}.weight_theta"), 2 * a, b);
                    } else {
                        push(format!("sage{layer}.weight_self"), a, b);
                        push(format!("sage{layer}.weight_neigh"), a, b);
                    }
                    let prefix = if self.variant == Variant::EdgeConvLinear {
                        "ec"
                    } else {
                        "sage"
                    };
                    push(format!("{prefix}{layer}.bias"), 1, b);
                    if i == 1 {
                        push("linear.weight".into(), n, n);
                        push("linear.bias".into(), n, 1);
                    }
                }
            }
            Variant::PointnetBaseline => {
                let stages = [(w[0], w[1]), (w[1], w[2]), (2 * w[2], w[3]), (w[3], w[4])];
                for (i, (a, b)) in stages.into_iter().enumerate() {
                    push(format!("mlp{}.weight", i + 1), a, b);
                    push(format!("mlp{}.bias", i + 1), 1, b);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))` and
/// zero biases, drawn from a ChaCha stream seeded by `spec.seed`.
pub fn init_params(spec: &ModelSpec) -> Result<Vec<Param>, NnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(spec
        .param_shapes()
        .into_iter()
        .map(|(name, r, c)| {
            let value = if name.ends_with("bias") {
                Matrix::zeros(r, c)
            } else {
                let bound = glorot_bound(r, c);
                Matrix::from_vec(
                    r,
                    c,
                    (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect(),
                )
            };
            Param { name, value }
        })
        .collect())
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A parameterized surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Param>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self, NnError> {
        let params = init_params(&spec)?;
        Ok(Model { spec, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(spec: ModelSpec, params: Vec<Param>) -> Result<Self, NnError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(NnError::InvalidSpec(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, r, c), p) in shapes.iter().zip(&params) {
            if name != &p.name || (*r, *c) != p.value.shape() {
                return Err(NnError::InvalidSpec(format!(
                    "parameter '{}' {:?} does not match expected '{name}' ({r}, {c})",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn check_node_count(&self, found: usize) -> Result<(), NnError> {
        match self.spec.node_count {
            Some(expected) if self.spec.variant.has_node_linear() && expected != found => {
                Err(NnError::NodeCountMismatch { expected, found })
            }
            _ => Ok(()),
        }
    }

    /// Records the parameters on `tape`: trainable leaves in train mode,
    /// constants otherwise.
    pub fn record_params(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Forward pass producing an `N x 1` wear prediction.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        adj: &Arc<Adjacency>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, NnError> {
        self.check_node_count(features.rows())?;
        forward_variant(&self.spec, tape, params, features, adj, mode, rng)
    }

    /// Eval-mode prediction, one value per node.
    pub fn predict(&self, features: &Matrix, adj: &Arc<Adjacency>) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false);
        let x = tape.constant(features.clone());
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &params, x, adj, Mode::Eval, &mut rng)?;
        Ok(tape.value(out).as_slice().to_vec())
    }
}

fn forward_variant<R: Rng + ?Sized>(
    spec: &ModelSpec,
    tape: &mut Tape,
    p: &[Var],
    x: Var,
    adj: &Arc<Adjacency>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, NnError> {
    if x.cols() != spec.widths[0] {
        return Err(NnError::InvalidSpec(format!(
            "expected {} input features, got {}",
            spec.widths[0],
            x.cols()
        )));
    }
    let out = match spec.variant {
        Variant::GraphConvBaseline => {
            let mut h = x;
            for layer in 0..5 {
                let y = graph_conv(tape, h, adj, p[2 * layer], p[2 * layer + 1])?;
                h = tape.relu(y);
            }
            h
        }
        Variant::PointnetBaseline => pointnet(tape, x, p)?,
        Variant::EdgeConvLinear | Variant::SageConvLinear => {
            let edge = spec.variant == Variant::EdgeConvLinear;
            // parameter cursor: conv layers take 2 (edge) or 3 (sage) arrays
            let mut k = 0;
            let conv = |tape: &mut Tape, h: Var, k: &mut usize| {
                let y = if edge {
                    let y = edge_conv(tape, h, adj, p[*k], p[*k + 1]);
                    *k += 2;
                    y
                } else {
                    let y = sage_conv(tape, h, adj, p[*k], p[*k + 1], p[*k + 2]);
                    *k += 3;
                    y
                }?;
                Ok::<Var, NnError>(tape.relu(y))
            };
            let h = conv(tape, x, &mut k)?;
            let h = conv(tape, h, &mut k)?;
            let h = tape.dropout(h, spec.dropout_p, mode, rng)?;
            let h = node_linear(tape, h, p[k], p[k + 1])?;
            k += 2;
            let mut h = tape.relu(h);
            if spec.dropout_placement == DropoutPlacement::BeforeAndAfter {
                h = tape.dropout(h, spec.dropout_p, mode, rng)?;
            }
            let h = conv(tape, h, &mut k)?;
            conv(tape, h, &mut k)?
        }
    };
    Ok(out)
}
