//! Mesh representation on an icosphere, a black-box software rasterizer and
//! the multi-sample score-function gradient estimator.

mod raster;
mod reinforce;

pub use raster::{rasterize, render, Frame, Image, Light, RenderConfig};
pub use reinforce::{
    reinforce_grad, reinforce_grad_with, Baseline, DEFAULT_NOISE_SCALE, DEFAULT_SAMPLES,
};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_VERTICES: usize = 162;
pub const NUM_FACES: usize = 320;
pub const POSE_LEN: usize = 6;
/// Displacements followed by Euler angles and translation.
pub const PARAM_LEN: usize = NUM_VERTICES + POSE_LEN;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rotation `Rz(a0)·Ry(a1)·Rx(a2)` in `(x, y, z)` coordinates.
pub fn euler_rotation(angles: Vec3) -> [Vec3; 3] {
    let (sz, cz) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sx, cx) = angles[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

fn rotate(r: &[Vec3; 3], v: Vec3) -> Vec3 {
    [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
}

/// Unit directions of a twice-subdivided icosahedron with its faces.
#[derive(Clone, Debug, PartialEq)]
pub struct Icosphere {
    pub directions: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Icosphere {
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Palette group of each face: the dominant axis and sign of its centroid.
    pub fn face_groups(&self) -> Vec<usize> {
        self.faces
            .iter()
            .map(|f| {
                let c = [0, 1, 2].map(|k| f.iter().map(|&i| self.directions[i][k]).sum::<f64>());
                let axis = (0..3)
                    .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()))
                    .unwrap();
                2 * axis + usize::from(c[axis] < 0.0)
            })
            .collect()
    }
}

fn subdivide(dirs: &mut Vec<Vec3>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, dirs: &mut Vec<Vec3>| {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let (p, q) = (dirs[a], dirs[b]);
            dirs.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
            dirs.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = midpoint(a, b, dirs);
        let bc = midpoint(b, c, dirs);
        let ca = midpoint(c, a, dirs);
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    out
}

fn build_icosphere() -> Icosphere {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut dirs: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..2 {
        faces = subdivide(&mut dirs, &faces);
    }
    Icosphere {
        directions: dirs,
        faces,
    }
}

pub fn base_directions() -> &'static Icosphere {
    static SPHERE: OnceLock<Icosphere> = OnceLock::new();
    SPHERE.get_or_init(build_icosphere)
}

pub const DEFAULT_PALETTE: [Vec3; 6] = [
    [0.9, 0.2, 0.2],
    [0.2, 0.8, 0.2],
    [0.2, 0.3, 0.9],
    [0.9, 0.9, 0.2],
    [0.2, 0.9, 0.9],
    [0.9, 0.2, 0.9],
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub angles: Vec3,
    pub translation: Vec3,
}

/// Radial vertex displacements along the base directions, a pose relative
/// to the camera and one color per face group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshParam {
    pub displacements: Vec<f64>,
    pub pose: Pose,
    pub colors: [Vec3; 6],
}

impl MeshParam {
    pub fn sphere(radius: f64, translation: Vec3) -> Self {
        Self {
            displacements: vec![radius; NUM_VERTICES],
            pose: Pose {
                angles: [0.0; 3],
                translation,
            },
            colors: DEFAULT_PALETTE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.displacements.len() != NUM_VERTICES {
            return Err(Error::InvalidArgument(format!(
                "{} displacements, expected {NUM_VERTICES}",
                self.displacements.len()
            )));
        }
        match self
            .displacements
            .iter()
            .position(|&d| !(d > 0.0 && d.is_finite()))
        {
            Some(index) => Err(Error::NonPositiveDisplacement {
                index,
                value: self.displacements[index],
            }),
            None => Ok(()),
        }
    }

    /// Flat `[displacements, angles, translation]` vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.displacements.clone();
        v.extend(self.pose.angles);
        v.extend(self.pose.translation);
        v
    }

    pub fn from_vec(v: &[f64], colors: [Vec3; 6]) -> Result<Self> {
        if v.len() != PARAM_LEN {
            return Err(Error::InvalidArgument(format!(
                "mesh parameter vector of length {}, expected {PARAM_LEN}",
                v.len()
            )));
        }
        let p = Self {
            displacements: v[..NUM_VERTICES].to_vec(),
            pose: Pose {
                angles: [v[NUM_VERTICES], v[NUM_VERTICES + 1], v[NUM_VERTICES + 2]],
                translation: [
                    v[NUM_VERTICES + 3],
                    v[NUM_VERTICES + 4],
                    v[NUM_VERTICES + 5],
                ],
            },
            colors,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Maps an unconstrained model output to mesh parameters: displacements
/// `radius·exp(raw)`, angles as given, translation offset from `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshDecoder {
    pub radius: f64,
    pub origin: Vec3,
    pub colors: [Vec3; 6],
}

impl Default for MeshDecoder {
    fn default() -> Self {
        Self {
            radius: 1.0,
            origin: [0.0, 0.0, 4.0],
            colors: DEFAULT_PALETTE,
        }
    }
}

impl MeshDecoder {
    pub fn decode(&self, raw: &[f64]) -> Result<MeshParam> {
        if raw.len() != PARAM_LEN {
            return Err(Error::InvalidArgument(format!(
                "raw mesh vector of length {}, expected {PARAM_LEN}",
                raw.len()
            )));
        }
        let mut v: Vec<f64> = raw[..NUM_VERTICES]
            .iter()
            .map(|r| self.radius * r.exp())
            .collect();
        v.extend(&raw[NUM_VERTICES..NUM_VERTICES + 3]);
        v.extend((0..3).map(|k| self.origin[k] + raw[NUM_VERTICES + 3 + k]));
        MeshParam::from_vec(&v, self.colors)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub face_colors: Vec<Vec3>,
}

/// `vertex_i = R·(d_i·u_i) + t`.
pub fn mesh_from_param(p: &MeshParam) -> Result<Mesh> {
    p.validate()?;
    let base = base_directions();
    let r = euler_rotation(p.pose.angles);
    let t = p.pose.translation;
    let vertices = base
        .directions
        .iter()
        .zip(&p.displacements)
        .map(|(u, &d)| {
            let v = rotate(&r, [u[0] * d, u[1] * d, u[2] * d]);
            [v[0] + t[0], v[1] + t[1], v[2] + t[2]]
        })
        .collect();
    let face_colors = base.face_groups().iter().map(|&g| p.colors[g]).collect();
    Ok(Mesh {
        vertices,
        faces: base.faces.clone(),
        face_colors,
    })
}

/// Axis-aligned cube of side `side` centered at `center`, one palette
/// color per side.
pub fn cube_mesh(center: Vec3, side: f64, colors: [Vec3; 6]) -> Mesh {
    let h = side / 2.0;
    let vertices = (0..8)
        .map(|i| [0, 1, 2].map(|k| center[k] + if i >> k & 1 == 1 { h } else { -h }))
        .collect();
    let quads: [([usize; 4], usize); 6] = [
        ([1, 3, 7, 5], 0),
        ([0, 4, 6, 2], 1),
        ([2, 6, 7, 3], 2),
        ([0, 1, 5, 4], 3),
        ([4, 5, 7, 6], 4),
        ([0, 2, 3, 1], 5),
    ];
    let mut faces = Vec::with_capacity(12);
    let mut face_colors = Vec::with_capacity(12);
    for ([a, b, c, d], g) in quads {
        faces.extend([[a, b, c], [a, c, d]]);
        face_colors.extend([colors[g], colors[g]]);
    }
    Mesh {
        vertices,
        faces,
        face_colors,
    }
}

impl Mesh {
    /// Wavefront OBJ: `v x y z` lines then 1-indexed `f i j k` lines.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    /// Parses the vertex and triangle subset of OBJ; colors default to grey.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut m = Mesh::default();
        for (n, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::Format(format!("OBJ line {}: {what}", n + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .map(|t| t.parse::<f64>().map_err(|_| bad("bad coordinate")))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    m.vertices.push([c[0], c[1], c[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            t.split('/')
                                .next()
                                .unwrap_or("")
                                .parse::<usize>()
                                .map_err(|_| bad("bad index"))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                        return Err(bad("faces must be 1-indexed triangles"));
                    }
                    m.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                    m.face_colors.push([0.7; 3]);
                }
                _ => {}
            }
        }
        if let Some(f) = m
            .faces
            .iter()
            .find(|f| f.iter().any(|&i| i >= m.vertices.len()))
        {
            return Err(Error::Format(format!(
                "face {f:?} indexes past {} vertices",
                m.vertices.len()
            )));
        }
        Ok(m)
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_obj())?;
        Ok(())
    }
}

/// Gaussian negative log-likelihood of `x` around `rendered`.
pub fn gaussian_nll(x: &Image, rendered: &Image, sigma: f64) -> Result<f64> {
    if (x.width, x.height) != (rendered.width, rendered.height) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs render {}x{}",
            x.width, x.height, rendered.width, rendered.height
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::DomainError(format!(
            "noise scale {sigma} must be positive"
        )));
    }
    let sq: f64 = x
        .data
        .iter()
        .zip(&rendered.data)
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum();
    let n = x.data.len() as f64;
    Ok(0.5 * sq / (sigma * sigma) + 0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln())
}

/// Negative log-likelihood of `x` under the rendering of `p`.
pub fn mesh_loss(x: &Image, p: &MeshParam, cfg: &RenderConfig, sigma: f64) -> Result<f64> {
    gaussian_nll(x, &rasterize(&mesh_from_param(p)?, cfg)?, sigma)
}
