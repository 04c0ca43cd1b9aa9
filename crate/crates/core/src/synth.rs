//! Synthetic die meshes and an analytic wear law standing in for FEM output.
//!
//! Solids are built from a structured `n x n x m` point lattice, each
//! hexahedral lattice cell split into six tetrahedra along its main diagonal.
//! The top face carries an off-center boss so that surface normals vary.

use crate::mesh_io::{MeshMetadata, UnstructuredMesh};
use crate::preprocess::{extract_surface, PreprocessError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

pub const WEAR_FIELD: &str = "wear";
/// Upper end of the wear range in N/m.
pub const WEAR_SCALE: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("infeasible resolution: {0}")]
    Resolution(String),
    #[error("invalid wear law: {0}")]
    WearLaw(String),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("invalid process parameters T={temperature}, mu={friction}: {reason}")]
    Parameters {
        temperature: f64,
        friction: f64,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Cylinder,
    CylindricalSector,
    /// Plain block, used for small hand-checkable meshes.
    Box,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Geometry::Cylinder => "cylinder",
            Geometry::CylindricalSector => "cylindrical_sector",
            Geometry::Box => "box",
        }
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cylinder" => Ok(Geometry::Cylinder),
            "cylindrical_sector" | "cylindrical-sector" | "sector" => {
                Ok(Geometry::CylindricalSector)
            }
            "box" => Ok(Geometry::Box),
            other => Err(format!(
                "unknown geometry '{other}' (expected cylinder, cylindrical_sector or box)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Pick the lattice whose surface node count is closest to this.
    SurfaceNodes(usize),
    /// Explicit lattice: `n` points along each horizontal axis, `m` vertically.
    Lattice { n: usize, m: usize },
}

/// `wear = C * mu * (T / T0) * max(0, n·d)^k * 2000`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WearLaw {
    pub coefficient: f64,
    pub reference_temperature: f64,
    /// Normalized before use.
    pub press_direction: [f64; 3],
    pub exponent: f64,
}

impl Default for WearLaw {
    fn default() -> Self {
        WearLaw {
            coefficient: 2.0,
            reference_temperature: 1200.0,
            press_direction: [0.15, 0.1, 1.0],
            exponent: 2.0,
        }
    }
}

impl WearLaw {
    fn unit_direction(&self) -> Result<[f64; 3], SynthError> {
        let d = self.press_direction;
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(SynthError::WearLaw(format!(
                "press direction {d:?} cannot be normalized"
            )));
        }
        Ok(d.map(|v| v / len))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.unit_direction()?;
        if !(self.exponent >= 1.0) {
            return Err(SynthError::WearLaw(format!(
                "exponent must be >= 1, got {}",
                self.exponent
            )));
        }
        if !(self.coefficient >= 0.0) || !self.coefficient.is_finite() {
            return Err(SynthError::WearLaw(format!(
                "coefficient must be finite and >= 0, got {}",
                self.coefficient
            )));
        }
        if !(self.reference_temperature > 0.0) {
            return Err(SynthError::WearLaw(
                "reference temperature must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// The process-dependent factor `C * mu * T / T0`.
    pub fn amplitude(&self, temperature: f64, friction: f64) -> f64 {
        self.coefficient * friction * temperature / self.reference_temperature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub geometry: Geometry,
    pub resolution: Resolution,
    /// `(temperature, friction coefficient)` pairs, one mesh each.
    pub grid: Vec<(f64, f64)>,
    pub wear_law: WearLaw,
    pub seed: u64,
}

pub const DEFAULT_SURFACE_NODES: usize = 500;
pub const TEMPERATURE_RANGE: (f64, f64) = (800.0, 1200.0);
pub const FRICTION_RANGE: (f64, f64) = (0.1, 0.5);

impl SynthConfig {
    pub fn new(geometry: Geometry, grid_size: usize, seed: u64) -> Self {
        SynthConfig {
            geometry,
            resolution: Resolution::SurfaceNodes(DEFAULT_SURFACE_NODES),
            grid: halton_grid(grid_size),
            wear_law: WearLaw::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.grid.is_empty() {
            return Err(SynthError::EmptyGrid);
        }
        self.wear_law.validate()?;
        lattice_size(self.geometry, self.resolution)?;
        Ok(())
    }
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Low-discrepancy (Halton bases 2 and 3) grid over the default
/// temperature and friction ranges.
pub fn halton_grid(size: usize) -> Vec<(f64, f64)> {
    let (t0, t1) = TEMPERATURE_RANGE;
    let (m0, m1) = FRICTION_RANGE;
    (1..=size)
        .map(|i| {
            (
                t0 + (t1 - t0) * radical_inverse(i, 2),
                m0 + (m1 - m0) * radical_inverse(i, 3),
            )
        })
        .collect()
}

/// Surface point count of an `n x n x m` lattice.
pub fn lattice_surface_count(n: usize, m: usize) -> usize {
    let inner = n.saturating_sub(2).pow(2) * m.saturating_sub(2);
    n * n * m - inner
}

struct Shape {
    /// Horizontal extent used to keep lattice cells roughly cubic.
    width: f64,
    height: f64,
}

fn shape(geometry: Geometry) -> Shape {
    match geometry {
        Geometry::Cylinder => Shape {
            width: 0.1,
            height: 0.03,
        },
        // radial extent 0.5R..R with R = 0.1
        Geometry::CylindricalSector => Shape {
            width: 0.05,
            height: 0.03,
        },
        Geometry::Box => Shape {
            width: 1.0,
            height: 1.0,
        },
    }
}

fn lattice_size(geometry: Geometry, resolution: Resolution) -> Result<(usize, usize), SynthError> {
    match resolution {
        Resolution::Lattice { n, m } => {
            if n < 2 || m < 2 {
                return Err(SynthError::Resolution(format!(
                    "lattice {n}x{n}x{m} is below the minimal closed mesh 2x2x2"
                )));
            }
            Ok((n, m))
        }
        Resolution::SurfaceNodes(target) => {
            if target < 8 {
                return Err(SynthError::Resolution(format!(
                    "{target} surface nodes is below the minimal closed mesh (8)"
                )));
            }
            let s = shape(geometry);
            let mut best: Option<(usize, usize, usize)> = None;
            for n in 2.. {
                let m = (((n - 1) as f64 * s.height / s.width).round() as usize + 1).max(2);
                let count = lattice_surface_count(n, m);
                let err = count.abs_diff(target);
                if best.is_none_or(|b| err < b.2) {
                    best = Some((n, m, err));
                }
                if count > 2 * target {
                    break;
                }
            }
            let (n, m, err) = best.expect("at least one lattice tried");
            if err as f64 > 0.2 * target as f64 {
                return Err(SynthError::Resolution(format!(
                    "closest lattice {n}x{n}x{m} has {} surface nodes, more than 20% from {target}",
                    lattice_surface_count(n, m)
                )));
            }
            Ok((n, m))
        }
    }
}

/// Top-surface height factor: 1 plus an off-center boss.
fn top_profile(geometry: Geometry, u: f64, v: f64) -> f64 {
    if geometry == Geometry::Box {
        return 1.0;
    }
    let (du, dv) = (u - 0.65, v - 0.55);
    1.0 + 0.4 * (-(du * du + dv * dv) / 0.04).exp()
}

/// Maps lattice coordinates `(u, v, w)` in `[0, 1]^3` to space.
fn map_point(geometry: Geometry, u: f64, v: f64, w: f64) -> [f64; 3] {
    let s = shape(geometry);
    let z = s.height * w * top_profile(geometry, u, v);
    match geometry {
        Geometry::Box => [s.width * u, s.width * v, z],
        Geometry::Cylinder => {
            // square-to-disk elliptical mapping
            let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
            let r = 0.5 * s.width;
            [
                r * a * (1.0 - 0.5 * b * b).sqrt(),
                r * b * (1.0 - 0.5 * a * a).sqrt(),
                z,
            ]
        }
        Geometry::CylindricalSector => {
            let outer = 2.0 * s.width;
            let r = outer * (0.5 + 0.5 * u);
            let theta = FRAC_PI_2 * v;
            [r * theta.cos(), r * theta.sin(), z]
        }
    }
}

fn signed_volume(p: &[[f64; 3]], c: [usize; 4]) -> f64 {
    let d = |a: usize| {
        let (x, y) = (p[c[a]], p[c[0]]);
        [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
    };
    let (a, b, e) = (d(1), d(2), d(3));
    a[0] * (b[1] * e[2] - b[2] * e[1]) - a[1] * (b[0] * e[2] - b[2] * e[0])
        + a[2] * (b[0] * e[1] - b[1] * e[0])
}

/// Six tetrahedra of the unit cube sharing the diagonal from corner 0 to 7,
/// one per axis ordering. Corner bits: x = 1, y = 2, z = 4.
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Builds the solid without any fields. Interior lattice points are jittered
/// by up to a tenth of a lattice step.
pub fn generate_mesh(config: &SynthConfig) -> Result<UnstructuredMesh, SynthError> {
    let (n, m) = lattice_size(config.geometry, config.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let index = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    let (hn, hm) = (1.0 / (n - 1) as f64, 1.0 / (m - 1) as f64);

    let mut points = Vec::with_capacity(n * n * m);
    for k in 0..m {
        for j in 0..n {
            for i in 0..n {
                let (mut u, mut v, mut w) = (i as f64 * hn, j as f64 * hn, k as f64 * hm);
                let interior = i > 0 && j > 0 && k > 0 && i + 1 < n && j + 1 < n && k + 1 < m;
                if interior {
                    u += 0.1 * hn * rng.gen_range(-1.0..1.0);
                    v += 0.1 * hn * rng.gen_range(-1.0..1.0);
                    w += 0.1 * hm * rng.gen_range(-1.0..1.0);
                }
                points.push(map_point(config.geometry, u, v, w));
            }
        }
    }

    let mut cells = Vec::with_capacity(6 * (n - 1) * (n - 1) * (m - 1));
    for k in 0..m - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let corner = |bits: usize| {
                    index(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1))
                };
                for tet in KUHN {
                    let mut c = tet.map(corner);
                    if signed_volume(&points, c) < 0.0 {
                        c.swap(2, 3);
                    }
                    cells.push(c);
                }
            }
        }
    }
    Ok(UnstructuredMesh::new(points, cells))
}

/// Writes the cell field `wear`. A cell's normal is the outward normal of its
/// largest boundary face; cells without a boundary face get zero.
pub fn apply_wear_law(
    mesh: &UnstructuredMesh,
    temperature: f64,
    friction: f64,
    law: &WearLaw,
) -> Result<UnstructuredMesh, SynthError> {
    law.validate()?;
    let d = law.unit_direction()?;
    let bad = |reason: String| SynthError::Parameters {
        temperature,
        friction,
        reason,
    };
    if !(friction >= 0.0) || !friction.is_finite() {
        return Err(bad("friction must be finite and >= 0".into()));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(bad("temperature must be finite and > 0".into()));
    }
    let amplitude = law.amplitude(temperature, friction);
    if amplitude > 1.0 {
        return Err(bad(format!(
            "C*mu*T/T0 = {amplitude} exceeds 1, so wear would leave [0, {WEAR_SCALE}]"
        )));
    }

    let surface = extract_surface(mesh)?;
    // (area, alignment) of the largest boundary face seen per cell
    let mut dominant: Vec<Option<(f64, f64)>> = vec![None; mesh.cell_count()];
    for face in &surface.faces {
        let (normal, area) = face.normal_and_area(&mesh.points);
        let align = normal[0] * d[0] + normal[1] * d[1] + normal[2] * d[2];
        let slot = &mut dominant[face.cell];
        if slot.is_none_or(|(a, _)| area > a) {
            *slot = Some((area, align));
        }
    }
    let wear = dominant
        .iter()
        .map(|slot| match slot {
            Some((_, align)) => amplitude * align.max(0.0).powf(law.exponent) * WEAR_SCALE,
            None => 0.0,
        })
        .collect();
    let mut out = mesh.clone();
    out.cell_fields.insert(WEAR_FIELD.into(), wear);
    Ok(out)
}

pub fn source_id(geometry: Geometry, index: usize) -> String {
    format!("{}-{index:03}", geometry.name())
}

/// One mesh per grid point, all sharing the same geometry and topology.
pub fn generate_dataset(
    config: &SynthConfig,
) -> Result<Vec<(UnstructuredMesh, MeshMetadata)>, SynthError> {
    config.validate()?;
    let base = generate_mesh(config)?;
    config
        .grid
        .iter()
        .enumerate()
        .map(|(i, &(t, mu))| {
            let mesh = apply_wear_law(&base, t, mu, &config.wear_law)?;
            Ok((
                mesh,
                MeshMetadata::new(t, mu, source_id(config.geometry, i)),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split '{other}' (expected train, val or test)"
            )),
        }
    }
}

/// Seeded assignment of `total` meshes to splits, an eighth each to
/// validation and test (40 gives 30/5/5, 64 gives 48/8/8).
pub fn default_splits(total: usize, seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let held = (total as f64 / 8.0).round() as usize;
    let (val, test) = if total >= 3 {
        (held.max(1), held.max(1))
    } else {
        (0, 0)
    };
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; total];
    for &i in &order[..val] {
        out[i] = Split::Val;
    }
    for &i in &order[val..val + test] {
        out[i] = Split::Test;
    }
    out
}
